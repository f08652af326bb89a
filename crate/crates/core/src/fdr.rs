//! Tail-area q-values and a histogram local false discovery rate.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{RcdError, Result};

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_LFDR_BINS: usize = 50;
/// Below this many p-values the histogram density is too noisy.
pub const LFDR_MIN_PVALUES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FdrMethod {
    Storey,
    Bh,
}

impl FromStr for FdrMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "storey" => Ok(FdrMethod::Storey),
            "bh" => Ok(FdrMethod::Bh),
            _ => Err(format!("unknown FDR method `{s}` (expected storey or bh)")),
        }
    }
}

fn check_pvalues(pvals: &[f64]) -> Result<()> {
    if pvals.is_empty() {
        return Err(RcdError::InvalidArgument("empty p-value vector".into()));
    }
    if let Some(p) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(RcdError::InvalidArgument(format!("p-value {p} outside [0, 1]")));
    }
    Ok(())
}

/// Storey's null proportion `#{p > lambda} / (m (1 - lambda))`, clipped to
/// `[0, 1]`. The count is floored at one so that `pi0` never reaches zero.
pub fn pi0_storey(pvals: &[f64], lambda: f64) -> Result<f64> {
    check_pvalues(pvals)?;
    if !(0.0..1.0).contains(&lambda) {
        return Err(RcdError::InvalidArgument(format!("lambda must lie in [0, 1), got {lambda}")));
    }
    let above = pvals.iter().filter(|&&p| p > lambda).count().max(1);
    Ok((above as f64 / (pvals.len() as f64 * (1.0 - lambda))).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QValues {
    pub q: Vec<f64>,
    pub pi0: f64,
}

/// Step-up q-values: `q_(i) = min_{k >= i} pi0 * m * p_(k) / k`, capped at 1.
pub fn qvalues(pvals: &[f64], method: FdrMethod, lambda: f64) -> Result<QValues> {
    check_pvalues(pvals)?;
    let pi0 = match method {
        FdrMethod::Bh => 1.0,
        FdrMethod::Storey => pi0_storey(pvals, lambda)?,
    };
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    let mut q = vec![0.0; m];
    let mut running = f64::INFINITY;
    for (rank0, &idx) in order.iter().enumerate().rev() {
        let raw = pi0 * pvals[idx] * m as f64 / (rank0 + 1) as f64;
        running = running.min(raw);
        q[idx] = running.min(1.0);
    }
    Ok(QValues { q, pi0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFdr {
    pub lfdr: Vec<f64>,
    pub pi0: f64,
    /// Too few p-values: `lfdr` holds Storey q-values instead.
    pub fallback: bool,
}

/// Local FDR `min(1, pi0 / f(p))` with `f` a nonincreasing histogram density
/// (equal-width bins pooled by adjacent violators).
pub fn lfdr(pvals: &[f64], bins: usize, lambda: f64) -> Result<LocalFdr> {
    check_pvalues(pvals)?;
    if bins == 0 {
        return Err(RcdError::InvalidArgument("lfdr needs at least one bin".into()));
    }
    let pi0 = pi0_storey(pvals, lambda)?;
    let m = pvals.len();
    if m < LFDR_MIN_PVALUES {
        let q = qvalues(pvals, FdrMethod::Storey, lambda)?;
        return Ok(LocalFdr {
            lfdr: q.q,
            pi0,
            fallback: true,
        });
    }
    let bin_of = |p: f64| ((p * bins as f64) as usize).min(bins - 1);
    let mut counts = vec![0usize; bins];
    for &p in pvals {
        counts[bin_of(p)] += 1;
    }
    let raw: Vec<f64> = counts.iter().map(|&c| c as f64 * bins as f64 / m as f64).collect();
    let density = nonincreasing_fit(&raw);
    let lfdr = pvals
        .iter()
        .map(|&p| (pi0 / density[bin_of(p)]).min(1.0))
        .collect();
    Ok(LocalFdr {
        lfdr,
        pi0,
        fallback: false,
    })
}

/// Equal-weight pool-adjacent-violators fit constrained to be nonincreasing.
fn nonincreasing_fit(values: &[f64]) -> Vec<f64> {
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, n1) = blocks[blocks.len() - 2];
            let (s2, n2) = blocks[blocks.len() - 1];
            if s1 / n1 as f64 >= s2 / n2 as f64 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = (s1 + s2, n1 + n2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(s, n)| std::iter::repeat_n(s / n as f64, n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bh_hand_example() {
        let q = qvalues(&[0.01, 0.02, 0.03, 0.04], FdrMethod::Bh, 0.5).unwrap();
        assert_eq!(q.q, vec![0.04, 0.04, 0.04, 0.04]);
        assert_eq!(qvalues(&[0.05], FdrMethod::Bh, 0.5).unwrap().q, vec![0.05]);
        assert_eq!(qvalues(&[1.0, 1.0, 1.0], FdrMethod::Storey, 0.5).unwrap().q, vec![1.0; 3]);
    }

    #[test]
    fn input_checks() {
        assert!(qvalues(&[], FdrMethod::Bh, 0.5).is_err());
        assert!(qvalues(&[1.2], FdrMethod::Bh, 0.5).is_err());
        assert!(pi0_storey(&[0.2], 1.0).is_err());
    }

    #[test]
    fn storey_scales_bh() {
        let p: Vec<f64> = (0..200).map(|i| (i as f64 + 0.5) / 200.0).map(|x: f64| x.powi(2)).collect();
        let bh = qvalues(&p, FdrMethod::Bh, 0.5).unwrap();
        let st = qvalues(&p, FdrMethod::Storey, 0.5).unwrap();
        assert!(st.pi0 < 1.0);
        for (a, b) in bh.q.iter().zip(&st.q) {
            assert!(b <= a);
        }
    }

    #[test]
    fn uniform_grid_has_unit_lfdr() {
        let m = 1000;
        let p: Vec<f64> = (1..=m).map(|i| i as f64 / m as f64).collect();
        let out = lfdr(&p, 50, 0.5).unwrap();
        assert!(!out.fallback);
        assert!(out.lfdr.iter().all(|&l| (l - 1.0).abs() <= 0.1));
    }

    #[test]
    fn mixture_lfdr_is_monotone() {
        let m = 2000;
        let p: Vec<f64> = (0..m)
            .map(|i| {
                let u = (i as f64 + 0.5) / m as f64;
                if i % 4 == 0 { u.powi(6) } else { u }
            })
            .collect();
        let out = lfdr(&p, 50, 0.5).unwrap();
        let mut pairs: Vec<(f64, f64)> = p.iter().copied().zip(out.lfdr.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1 + 1e-15));
        assert!(pairs[0].1 < pairs[m - 1].1);
    }

    #[test]
    fn small_inputs_fall_back_to_q() {
        let p = [0.01, 0.2, 0.5, 0.9];
        let out = lfdr(&p, 50, 0.5).unwrap();
        assert!(out.fallback);
        assert_eq!(out.lfdr, qvalues(&p, FdrMethod::Storey, 0.5).unwrap().q);
    }

    #[test]
    fn pava_pools_violators() {
        assert_eq!(nonincreasing_fit(&[3.0, 1.0, 2.0, 0.0]), vec![3.0, 1.5, 1.5, 0.0]);
        assert_eq!(nonincreasing_fit(&[1.0, 2.0, 3.0]), vec![2.0, 2.0, 2.0]);
    }
}
