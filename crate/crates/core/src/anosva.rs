//! Two-way fixed-effects ANOVA (tissue x junction) with an interaction test.
//!
//! The cell-means model is fitted by ordinary least squares; effects are
//! reported under unweighted sum-to-zero constraints. The interaction sum of
//! squares is the squared distance between the saturated and additive fits,
//! which holds for unbalanced cells as well.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::data::Dataset;
use crate::error::{RcdError, Result};
use crate::junctions::IncompatibleSet;
use crate::mixed_model::{collect_spots, CellObservation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoWayAnova {
    pub n_rows: usize,
    pub n_cols: usize,
    pub n_obs: usize,
    pub f_stat: f64,
    pub df: (usize, usize),
    pub p_value: f64,
    pub ss_interaction: f64,
    pub ss_residual: f64,
    pub mu0: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Row-major `n_rows x n_cols`.
    pub gamma: Vec<f64>,
}

impl TwoWayAnova {
    pub fn gamma(&self, row: usize, col: usize) -> f64 {
        self.gamma[row * self.n_cols + col]
    }
}

/// Interaction F-test for observations indexed by cell `row * n_cols + col`.
pub fn two_way_interaction(n_rows: usize, n_cols: usize, obs: &[CellObservation]) -> Result<TwoWayAnova> {
    if n_rows < 2 || n_cols < 2 {
        return Err(RcdError::InvalidArgument("need at least two levels per factor".into()));
    }
    let n_cells = n_rows * n_cols;
    let mut sums = vec![0.0; n_cells];
    let mut counts = vec![0usize; n_cells];
    for o in obs {
        if o.cell >= n_cells {
            return Err(RcdError::InvalidArgument(format!("cell {} out of range", o.cell)));
        }
        sums[o.cell] += o.value;
        counts[o.cell] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(RcdError::InsufficientReplication(format!(
            "empty cell (row {}, column {})",
            empty / n_cols,
            empty % n_cols
        )));
    }
    let n = obs.len();
    let df_resid = n - n_cells;
    if df_resid == 0 {
        return Err(RcdError::InsufficientReplication("zero residual degrees of freedom".into()));
    }
    let cell_mean: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let ss_residual: f64 = obs.iter().map(|o| (o.value - cell_mean[o.cell]).powi(2)).sum();

    let additive = additive_cell_fits(n_rows, n_cols, &cell_mean, &counts)?;
    let ss_interaction: f64 = (0..n_cells)
        .map(|c| counts[c] as f64 * (cell_mean[c] - additive[c]).powi(2))
        .sum();

    let df_int = (n_rows - 1) * (n_cols - 1);
    let (f_stat, p_value) = if ss_residual > 0.0 {
        let f = (ss_interaction / df_int as f64) / (ss_residual / df_resid as f64);
        let dist = FisherSnedecor::new(df_int as f64, df_resid as f64)
            .map_err(|e| RcdError::InvalidArgument(e.to_string()))?;
        (f, dist.sf(f).clamp(0.0, 1.0))
    } else if ss_interaction > 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        (0.0, 1.0)
    };

    let mu0 = cell_mean.iter().sum::<f64>() / n_cells as f64;
    let alpha: Vec<f64> = (0..n_rows)
        .map(|r| (0..n_cols).map(|c| cell_mean[r * n_cols + c]).sum::<f64>() / n_cols as f64 - mu0)
        .collect();
    let beta: Vec<f64> = (0..n_cols)
        .map(|c| (0..n_rows).map(|r| cell_mean[r * n_cols + c]).sum::<f64>() / n_rows as f64 - mu0)
        .collect();
    let gamma = (0..n_cells)
        .map(|k| cell_mean[k] - mu0 - alpha[k / n_cols] - beta[k % n_cols])
        .collect();

    Ok(TwoWayAnova {
        n_rows,
        n_cols,
        n_obs: n,
        f_stat,
        df: (df_int, df_resid),
        p_value,
        ss_interaction,
        ss_residual,
        mu0,
        alpha,
        beta,
        gamma,
    })
}

/// Fitted cell values of the additive model `mu + a_r + b_c` (weighted least
/// squares on cell means, equivalent to OLS on the raw observations).
fn additive_cell_fits(n_rows: usize, n_cols: usize, cell_mean: &[f64], counts: &[usize]) -> Result<Vec<f64>> {
    let p = 1 + (n_rows - 1) + (n_cols - 1);
    let n_cells = n_rows * n_cols;
    let design = DMatrix::from_fn(n_cells, p, |cell, k| {
        let (r, c) = (cell / n_cols, cell % n_cols);
        let effect = |level: usize, idx: usize, last: usize| {
            if level == idx {
                1.0
            } else if level == last {
                -1.0
            } else {
                0.0
            }
        };
        if k == 0 {
            1.0
        } else if k < n_rows {
            effect(r, k - 1, n_rows - 1)
        } else {
            effect(c, k - n_rows, n_cols - 1)
        }
    });
    let w = DVector::from_fn(n_cells, |i, _| (counts[i] as f64).sqrt());
    let xw = DMatrix::from_fn(n_cells, p, |i, k| design[(i, k)] * w[i]);
    let yw = DVector::from_fn(n_cells, |i, _| cell_mean[i] * w[i]);
    let coef = xw
        .svd(true, true)
        .solve(&yw, 1e-12)
        .map_err(|e| RcdError::InvalidArgument(e.to_string()))?;
    let fitted = design * coef;
    Ok(fitted.iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnosvaResult {
    pub set_id: String,
    pub gene: String,
    pub tissues: (String, String),
    pub junctions: Vec<String>,
    pub anova: TwoWayAnova,
}

impl AnosvaResult {
    pub fn f_stat(&self) -> f64 {
        self.anova.f_stat
    }

    pub fn p_value(&self) -> f64 {
        self.anova.p_value
    }

    /// Difference of the tissue main effects, second minus first (log2).
    pub fn log_fold_change(&self) -> f64 {
        self.anova.alpha[1] - self.anova.alpha[0]
    }
}

/// ANOSVA for one incompatible set: rows are the two tissues, columns the
/// junctions. Spot pairing is ignored.
pub fn fit_anosva(dataset: &Dataset, set: &IncompatibleSet, tissues: (&str, &str)) -> Result<AnosvaResult> {
    let spots = collect_spots(dataset, set, tissues)?;
    let obs: Vec<CellObservation> = spots.observations().copied().collect();
    let anova = two_way_interaction(2, set.members.len(), &obs)?;
    Ok(AnosvaResult {
        set_id: set.set_id.clone(),
        gene: set.gene.clone(),
        tissues: (tissues.0.to_string(), tissues.1.to_string()),
        junctions: set.member_ids().map(str::to_string).collect(),
        anova,
    })
}
