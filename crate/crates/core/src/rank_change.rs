//! Posterior probabilities of latent rank change.
//!
//! The posterior of the `2J` cell means is approximated by
//! `N(mu_hat, sigma_mu)`. Each Monte-Carlo draw samples both tissues jointly,
//! ranks the junctions within each tissue and compares the two ranks of every
//! junction. `U` is the fraction of draws where a junction ranks higher in the
//! second tissue than in the first, `D` the fraction where it ranks lower.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{RcdError, Result};
use crate::mixed_model::FitResult;
use crate::rng;

pub const DEFAULT_KAPPA: f64 = 0.9;
pub const DEFAULT_DRAWS: usize = 10_000;
pub const MIN_DRAWS: usize = 1_000;
/// Diagonal jitter used when the clipped covariance still fails to factor.
pub const JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Call {
    Up,
    Down,
    None,
}

impl fmt::Display for Call {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Call::Up => "up",
            Call::Down => "down",
            Call::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCall {
    pub set_id: String,
    pub gene: String,
    pub junction: String,
    pub tissues: (String, String),
    pub u: f64,
    pub d: f64,
    pub e: f64,
    pub call: Call,
    pub draws: usize,
    pub seed: u64,
}

impl RankCall {
    pub fn max_prob(&self) -> f64 {
        self.u.max(self.d)
    }
}

/// `R(x_i) = #{k : x_k <= x_i}`; ties share the larger rank.
pub fn latent_ranks(mu: &[f64]) -> Vec<usize> {
    mu.iter()
        .map(|&x| mu.iter().filter(|&&y| y <= x).count())
        .collect()
}

pub fn validate_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.5 && kappa < 1.0 {
        Ok(())
    } else {
        Err(RcdError::InvalidArgument(format!("kappa must lie in (0.5, 1), got {kappa}")))
    }
}

pub fn call_dse(u: f64, d: f64, kappa: f64) -> Result<Call> {
    validate_kappa(kappa)?;
    for p in [u, d] {
        if !(0.0..=1.0).contains(&p) {
            return Err(RcdError::InvalidArgument(format!("probability {p} outside [0, 1]")));
        }
    }
    Ok(if u > kappa {
        Call::Up
    } else if d > kappa {
        Call::Down
    } else {
        Call::None
    })
}

/// Counts of rank increases and decreases over a batch of joint draws.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankTally {
    pub up: Vec<usize>,
    pub down: Vec<usize>,
    pub draws: usize,
}

impl RankTally {
    pub fn new(n_junctions: usize) -> Self {
        Self {
            up: vec![0; n_junctions],
            down: vec![0; n_junctions],
            draws: 0,
        }
    }

    /// Adds one joint draw laid out as `[tissue 1 block, tissue 2 block]`.
    pub fn add(&mut self, draw: &[f64]) {
        let j = self.up.len();
        debug_assert_eq!(draw.len(), 2 * j);
        let (first, second) = draw.split_at(j);
        for i in 0..j {
            let r1 = first.iter().filter(|&&y| y <= first[i]).count();
            let r2 = second.iter().filter(|&&y| y <= second[i]).count();
            if r1 < r2 {
                self.up[i] += 1;
            } else if r1 > r2 {
                self.down[i] += 1;
            }
        }
        self.draws += 1;
    }

    pub fn probabilities(&self, junction: usize) -> (f64, f64, f64) {
        let m = self.draws as f64;
        let up = self.up[junction];
        let down = self.down[junction];
        let equal = self.draws - up - down;
        (up as f64 / m, down as f64 / m, equal as f64 / m)
    }
}

/// Lower factor `L` with `L L' ~ sigma`, plus the diagonal jitter added.
///
/// Tries a plain Cholesky first; otherwise symmetrizes, clips negative
/// eigenvalues at zero and adds [`JITTER`] to the diagonal.
pub fn sampling_factor(sigma: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if sigma.iter().any(|x| !x.is_finite()) {
        return Err(RcdError::NotPositiveSemidefinite("non-finite entries".into()));
    }
    let sym = (sigma + sigma.transpose()) * 0.5;
    if let Some(chol) = Cholesky::new(sym.clone()) {
        return Ok((chol.l(), 0.0));
    }
    let eig = sym.symmetric_eigen();
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let n = rebuilt.nrows();
    let jittered = (&rebuilt + rebuilt.transpose()) * 0.5 + DMatrix::<f64>::identity(n, n) * JITTER;
    Cholesky::new(jittered)
        .map(|c| (c.l(), JITTER))
        .ok_or_else(|| RcdError::NotPositiveSemidefinite("factorization failed after clipping".into()))
}

/// Rank-change calls for every junction of a fitted set.
#[derive(Debug, Clone, PartialEq)]
pub struct RankChange {
    pub calls: Vec<RankCall>,
    pub jitter: f64,
}

/// Monte-Carlo estimate of `U`, `D` and `E` for each junction of `fit`.
///
/// Sampling always runs with the lexicographically smaller tissue first, so
/// swapping the tissue labels of a fit reuses the same draws and exchanges
/// `U` and `D` exactly.
pub fn rank_change_probability(fit: &FitResult, draws: usize, seed: u64, kappa: f64) -> Result<RankChange> {
    validate_kappa(kappa)?;
    if draws < MIN_DRAWS {
        return Err(RcdError::InvalidArgument(format!(
            "need at least {MIN_DRAWS} draws, got {draws}"
        )));
    }
    let j = fit.n_junctions();
    if j < 2 || fit.mu_hat.shape() != (2, j) || fit.sigma_mu.shape() != (2 * j, 2 * j) {
        return Err(RcdError::InvalidArgument(format!(
            "fit for set {} has inconsistent dimensions",
            fit.set_id
        )));
    }

    let swapped = fit.tissues.0 > fit.tissues.1;
    let canonical = |i: usize| if swapped { (i + j) % (2 * j) } else { i };
    let mu = fit.mu_vector();
    let mu_c = DVector::from_fn(2 * j, |i, _| mu[canonical(i)]);
    let sigma_c = DMatrix::from_fn(2 * j, 2 * j, |r, c| fit.sigma_mu[(canonical(r), canonical(c))]);
    let (l, jitter) = sampling_factor(&sigma_c)?;

    let mut rng = rng::from_seed(seed);
    let mut tally = RankTally::new(j);
    let mut z = vec![0.0; 2 * j];
    let mut x = vec![0.0; 2 * j];
    let mut ordered = vec![0.0; 2 * j];
    for _ in 0..draws {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for r in 0..2 * j {
            let mut acc = mu_c[r];
            for c in 0..=r {
                acc += l[(r, c)] * z[c];
            }
            x[r] = acc;
        }
        for (i, slot) in ordered.iter_mut().enumerate() {
            *slot = x[canonical(i)];
        }
        tally.add(&ordered);
    }

    let calls = (0..j)
        .map(|k| {
            let (u, d, e) = tally.probabilities(k);
            Ok(RankCall {
                set_id: fit.set_id.clone(),
                gene: fit.gene.clone(),
                junction: fit.junctions[k].clone(),
                tissues: fit.tissues.clone(),
                u,
                d,
                e,
                call: call_dse(u, d, kappa)?,
                draws,
                seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankChange { calls, jitter })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn fixture(mu1: &[f64], mu2: &[f64], var: f64) -> FitResult {
        let j = mu1.len();
        FitResult {
            set_id: "s".into(),
            gene: "G".into(),
            tissues: ("A".into(), "B".into()),
            junctions: (1..=j).map(|i| format!("j{i}")).collect(),
            mu_hat: DMatrix::from_fn(2, j, |t, k| if t == 0 { mu1[k] } else { mu2[k] }),
            sigma_mu: DMatrix::from_diagonal_element(2 * j, 2 * j, var),
            var_spot: 0.0,
            var_resid: 1.0,
            rho: 0.0,
            rho_at_bound: false,
            loglik: 0.0,
            start_loglik: 0.0,
            n_obs: 0,
        }
    }

    #[test]
    fn rank_examples() {
        assert_eq!(latent_ranks(&[1.0, 2.0, 3.0]), vec![1, 2, 3]);
        assert_eq!(latent_ranks(&[2.0, 2.0]), vec![2, 2]);
        assert_eq!(latent_ranks(&[5.0, 1.0, 3.0]), vec![3, 1, 2]);
    }

    #[test]
    fn call_thresholds() {
        assert_eq!(call_dse(0.95, 0.01, 0.9).unwrap(), Call::Up);
        assert_eq!(call_dse(0.01, 0.95, 0.9).unwrap(), Call::Down);
        assert_eq!(call_dse(0.5, 0.5, 0.9).unwrap(), Call::None);
        assert_eq!(call_dse(0.89999, 0.0, 0.9).unwrap(), Call::None);
        assert_eq!(call_dse(0.9, 0.0, 0.9).unwrap(), Call::None);
        assert!(call_dse(0.9, 0.0, 0.5).is_err());
        assert!(call_dse(0.9, 0.0, 1.0).is_err());
    }

    #[test]
    fn no_change_without_variance() {
        let fit = fixture(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 1e-8);
        let out = rank_change_probability(&fit, 2000, 1, 0.9).unwrap();
        for c in &out.calls {
            assert_eq!((c.u, c.d, c.e), (0.0, 0.0, 1.0));
            assert_eq!(c.call, Call::None);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let fit = fixture(&[0.0, 0.3, 0.1], &[0.2, 0.0, 0.4], 0.2);
        let out = rank_change_probability(&fit, 5000, 3, 0.9).unwrap();
        for c in &out.calls {
            assert!((c.u + c.d + c.e - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tissue_swap_exchanges_u_and_d() {
        let fit = fixture(&[0.0, 1.0, 0.5], &[1.0, 0.0, 0.7], 0.3);
        let mut swapped = fit.clone();
        swapped.tissues = ("B".into(), "A".into());
        swapped.mu_hat = DMatrix::from_fn(2, 3, |t, k| fit.mu_hat[(1 - t, k)]);
        let a = rank_change_probability(&fit, 4000, 99, 0.9).unwrap();
        let b = rank_change_probability(&swapped, 4000, 99, 0.9).unwrap();
        for (x, y) in a.calls.iter().zip(&b.calls) {
            assert_eq!(x.u, y.d);
            assert_eq!(x.d, y.u);
        }
    }

    #[test]
    fn tally_swap_on_transposed_draws() {
        let draws = [[0.1, 0.5, 0.3, 0.2], [0.4, 0.2, 0.1, 0.9], [0.0, 0.0, 1.0, 2.0]];
        let mut a = RankTally::new(2);
        let mut b = RankTally::new(2);
        for d in &draws {
            a.add(d);
            b.add(&[d[2], d[3], d[0], d[1]]);
        }
        assert_eq!(a.up, b.down);
        assert_eq!(a.down, b.up);
    }

    #[test]
    fn indefinite_covariance_is_clipped() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (l, jitter) = sampling_factor(&sigma).unwrap();
        assert!(jitter == 0.0 || jitter == JITTER);
        assert!(((&l * l.transpose()) - &sigma).abs().max() < 1e-8);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, f64::NAN, 1.0]);
        assert!(sampling_factor(&bad).is_err());
    }

    #[test]
    fn rejects_small_draw_counts() {
        let fit = fixture(&[0.0, 1.0], &[1.0, 0.0], 0.5);
        assert!(rank_change_probability(&fit, 10, 1, 0.9).is_err());
    }
}
