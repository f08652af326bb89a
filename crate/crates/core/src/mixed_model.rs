//! Gaussian random-effects fit for one incompatible set and one tissue pair.
//!
//! Model: `y = mu[t, j] + nu_s + eps`, where `nu_s ~ N(0, var_spot)` is shared
//! by the observations of one spot (one probe on one array) and
//! `eps ~ N(0, var_resid)` is independent noise. Each spot group therefore has
//! compound-symmetric covariance `tau2 * ((1 - rho) I + rho 11')` with
//! `tau2 = var_spot + var_resid` and `rho = var_spot / tau2`.
//!
//! For fixed `rho` the means follow from generalized least squares and `tau2`
//! from the weighted residual sum of squares, which leaves a one-dimensional
//! profile likelihood in `rho`. It is maximized on `[0, 1 - RHO_GUARD]`: a
//! coarse grid brackets the maximum, then bisection on the analytic profile
//! score narrows the bracket to machine precision. The covariance of the
//! means is the inverse of the mean block of the observed information,
//! `(X' V^-1 X)^-1`, evaluated at the estimate.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{RcdError, Result};
use crate::junctions::IncompatibleSet;

/// Upper guard on the variance ratio.
pub const RHO_GUARD: f64 = 1e-6;
/// Required width of the final bracket on the variance ratio.
pub const RHO_TOLERANCE: f64 = 1e-6;
const GRID_POINTS: usize = 41;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// One observation and the (tissue, junction) cell it belongs to.
/// Cells are numbered `tissue * n_junctions + junction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellObservation {
    pub cell: usize,
    pub value: f64,
}

/// Observations grouped by spot; the sufficient input for the fit.
#[derive(Debug, Clone, PartialEq)]
pub struct SpotGroups {
    n_cells: usize,
    groups: Vec<Vec<CellObservation>>,
}

impl SpotGroups {
    pub fn new(n_cells: usize, groups: Vec<Vec<CellObservation>>) -> Result<Self> {
        let groups: Vec<_> = groups.into_iter().filter(|g| !g.is_empty()).collect();
        for g in &groups {
            for o in g {
                if o.cell >= n_cells {
                    return Err(RcdError::InvalidArgument(format!(
                        "cell index {} out of range ({} cells)",
                        o.cell, n_cells
                    )));
                }
                if !o.value.is_finite() {
                    return Err(RcdError::InvalidArgument("non-finite observation".into()));
                }
            }
        }
        Ok(Self { n_cells, groups })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn groups(&self) -> &[Vec<CellObservation>] {
        &self.groups
    }

    pub fn n_obs(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn cell_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_cells];
        for o in self.groups.iter().flatten() {
            counts[o.cell] += 1;
        }
        counts
    }

    pub fn observations(&self) -> impl Iterator<Item = &CellObservation> {
        self.groups.iter().flatten()
    }

    fn has_shared_spots(&self) -> bool {
        self.groups.iter().any(|g| g.len() > 1)
    }
}

/// Gathers the observations of `set` for the two tissues, grouped by spot.
///
/// Channels hybridized with other tissues are ignored, so a spot contributes
/// two observations when both tissues share its array and one otherwise.
pub fn collect_spots(dataset: &Dataset, set: &IncompatibleSet, tissues: (&str, &str)) -> Result<SpotGroups> {
    let (t1, t2) = tissues;
    if t1 == t2 {
        return Err(RcdError::InvalidArgument(format!("tissue pair must differ, got {t1} twice")));
    }
    let known = dataset.tissues();
    for t in [t1, t2] {
        if !known.iter().any(|k| k == t) {
            return Err(RcdError::InvalidArgument(format!("tissue {t} not in design")));
        }
    }
    let n_junctions = set.members.len();
    let mut spots: BTreeMap<(usize, &str, &str), Vec<(crate::data::Channel, CellObservation)>> = BTreeMap::new();
    for (j, member) in set.members.iter().enumerate() {
        for probe_id in &member.probe_ids {
            for rec in dataset.records_for_probe(probe_id) {
                let Some(assignment) = dataset.assignment(&rec.array_id, rec.channel) else {
                    continue;
                };
                let t = if assignment.tissue == t1 {
                    0
                } else if assignment.tissue == t2 {
                    1
                } else {
                    continue;
                };
                spots
                    .entry((j, rec.array_id.as_str(), rec.probe_id.as_str()))
                    .or_default()
                    .push((
                        rec.channel,
                        CellObservation {
                            cell: t * n_junctions + j,
                            value: rec.value,
                        },
                    ));
            }
        }
    }
    let groups = spots
        .into_values()
        .map(|mut g| {
            g.sort_by_key(|(c, _)| *c);
            g.into_iter().map(|(_, o)| o).collect()
        })
        .collect();
    let spots = SpotGroups::new(2 * n_junctions, groups)?;

    let counts = spots.cell_counts();
    let thin: Vec<String> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c < 2)
        .map(|(cell, &c)| {
            let tissue = if cell < n_junctions { t1 } else { t2 };
            format!("{}/{tissue} has {c}", set.members[cell % n_junctions].id)
        })
        .collect();
    if !thin.is_empty() {
        return Err(RcdError::InsufficientReplication(format!(
            "set {} needs >= 2 spots per junction and tissue: {}",
            set.set_id,
            thin.join(", ")
        )));
    }
    Ok(spots)
}

/// GLS solution and profile quantities at a fixed variance ratio.
#[derive(Debug, Clone)]
struct ProfilePoint {
    rho: f64,
    loglik: f64,
    score: f64,
    tau2: f64,
    beta: DVector<f64>,
    /// `X' R^-1 X`; the information of the means is this divided by `tau2`.
    info: DMatrix<f64>,
}

fn cs_weights(m: usize, rho: f64) -> (f64, f64) {
    // R^-1 = a I - b 11' for R = (1 - rho) I + rho 11' of size m
    let a = 1.0 / (1.0 - rho);
    let b = a * rho / (1.0 + (m as f64 - 1.0) * rho);
    (a, b)
}

fn profile_at(spots: &SpotGroups, rho: f64) -> Result<ProfilePoint> {
    let p = spots.n_cells;
    let n = spots.n_obs() as f64;
    let mut info = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut logdet = 0.0;
    let mut dlogdet = 0.0;
    for g in &spots.groups {
        let m = g.len();
        let (a, b) = cs_weights(m, rho);
        let sum: f64 = g.iter().map(|o| o.value).sum();
        for oi in g {
            rhs[oi.cell] += a * oi.value - b * sum;
            for ok in g {
                info[(oi.cell, ok.cell)] -= b;
            }
            info[(oi.cell, oi.cell)] += a;
        }
        let k = m as f64 - 1.0;
        logdet += k * (-rho).ln_1p() + (k * rho).ln_1p();
        dlogdet += -k / (1.0 - rho) + k / (1.0 + k * rho);
    }
    let chol = Cholesky::new(info.clone()).ok_or(RcdError::SingularInformation)?;
    let beta = chol.solve(&rhs);

    let mut quad = 0.0;
    let mut dquad = 0.0;
    for g in &spots.groups {
        let (a, b) = cs_weights(g.len(), rho);
        let resid: Vec<f64> = g.iter().map(|o| o.value - beta[o.cell]).collect();
        let esum: f64 = resid.iter().sum();
        let ess: f64 = resid.iter().map(|e| e * e).sum();
        quad += a * ess - b * esum * esum;
        // w = R^-1 e ; dQ/drho = -((1'w)^2 - w'w)
        let w: Vec<f64> = resid.iter().map(|e| a * e - b * esum).collect();
        let wsum: f64 = w.iter().sum();
        let wss: f64 = w.iter().map(|x| x * x).sum();
        dquad -= wsum * wsum - wss;
    }
    let tau2 = quad / n;
    if !(tau2.is_finite() && tau2 > 0.0) {
        return Err(RcdError::Degenerate(format!("zero residual variance at rho = {rho}")));
    }
    let loglik = -0.5 * n * (LN_2PI + tau2.ln() + 1.0) - 0.5 * logdet;
    let score = -0.5 * n * dquad / quad - 0.5 * dlogdet;
    Ok(ProfilePoint {
        rho,
        loglik,
        score,
        tau2,
        beta,
        info,
    })
}

/// Maximum-likelihood variance components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceComponents {
    pub rho: f64,
    pub var_spot: f64,
    pub var_resid: f64,
    pub loglik: f64,
    /// Log-likelihood at `rho = 0`: cell means with pooled variance.
    pub start_loglik: f64,
    /// The estimate sits on the upper guard `1 - RHO_GUARD`.
    pub at_upper_bound: bool,
}

/// Maximizes the profile likelihood over `rho` and splits `tau2`.
pub fn profile_variance_ratio(spots: &SpotGroups) -> Result<VarianceComponents> {
    let best = maximize_profile(spots)?;
    let start = profile_at(spots, 0.0)?;
    Ok(components(&best, &start))
}

fn components(best: &ProfilePoint, start: &ProfilePoint) -> VarianceComponents {
    VarianceComponents {
        rho: best.rho,
        var_spot: best.rho * best.tau2,
        var_resid: (1.0 - best.rho) * best.tau2,
        loglik: best.loglik,
        start_loglik: start.loglik,
        at_upper_bound: best.rho >= 1.0 - RHO_GUARD,
    }
}

fn check_degenerate(spots: &SpotGroups) -> Result<()> {
    let scale = spots
        .observations()
        .map(|o| o.value.abs())
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let n = spots.n_obs() as f64;
    let mean = spots.observations().map(|o| o.value).sum::<f64>() / n;
    let var = spots.observations().map(|o| (o.value - mean).powi(2)).sum::<f64>() / n;
    if var <= (1e-12 * scale).powi(2) {
        return Err(RcdError::Degenerate("zero total variance".into()));
    }
    Ok(())
}

fn maximize_profile(spots: &SpotGroups) -> Result<ProfilePoint> {
    if spots.n_obs() <= spots.n_cells {
        return Err(RcdError::InsufficientReplication(
            "no residual degrees of freedom".into(),
        ));
    }
    check_degenerate(spots)?;
    if !spots.has_shared_spots() {
        // rho is not identified without shared spots; the likelihood is flat
        return profile_at(spots, 0.0);
    }

    let upper = 1.0 - RHO_GUARD;
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| {
            if i + 1 == GRID_POINTS {
                upper
            } else {
                i as f64 / (GRID_POINTS - 1) as f64
            }
        })
        .collect();
    let points = grid
        .iter()
        .map(|&r| profile_at(spots, r))
        .collect::<Result<Vec<_>>>()?;
    if points.iter().any(|p| !p.loglik.is_finite()) {
        return Err(RcdError::NonConvergence("non-finite profile log-likelihood".into()));
    }
    let mut best_idx = 0;
    for (i, p) in points.iter().enumerate() {
        if p.loglik > points[best_idx].loglik {
            best_idx = i;
        }
    }

    let mut best = points[best_idx].clone();
    let mut candidates = Vec::new();
    if best_idx > 0 && points[best_idx - 1].score > 0.0 && points[best_idx].score <= 0.0 {
        candidates.push(bisect_score(spots, &points[best_idx - 1], &points[best_idx])?);
    }
    if best_idx + 1 < points.len() && points[best_idx].score >= 0.0 && points[best_idx + 1].score < 0.0 {
        candidates.push(bisect_score(spots, &points[best_idx], &points[best_idx + 1])?);
    }
    let tol = 1e-10 * (1.0 + best.loglik.abs());
    for c in candidates {
        if c.loglik >= best.loglik - tol {
            best = c;
        }
    }
    Ok(best)
}

/// Bisection for the root of the profile score between `lo` (score > 0) and
/// `hi` (score <= 0); runs until the bracket can no longer shrink.
fn bisect_score(spots: &SpotGroups, lo: &ProfilePoint, hi: &ProfilePoint) -> Result<ProfilePoint> {
    // The log-likelihood is flat to rounding near its maximum, so only the
    // sign of the score steers the search.
    let (mut a, mut b) = (lo.rho, hi.rho);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let p = profile_at(spots, mid)?;
        if !p.score.is_finite() {
            return Err(RcdError::NonConvergence(format!("non-finite score at rho = {mid}")));
        }
        if p.score > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    if b - a > RHO_TOLERANCE {
        return Err(RcdError::NonConvergence(format!("bracket [{a}, {b}] did not shrink")));
    }
    profile_at(spots, 0.5 * (a + b))
}

/// Point estimates and joint covariance of the cell means for one set and
/// tissue pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub set_id: String,
    pub gene: String,
    pub tissues: (String, String),
    pub junctions: Vec<String>,
    /// 2 x J; row 0 is `tissues.0`.
    pub mu_hat: DMatrix<f64>,
    /// 2J x 2J, indexed `tissue * J + junction`.
    pub sigma_mu: DMatrix<f64>,
    pub var_spot: f64,
    pub var_resid: f64,
    pub rho: f64,
    pub rho_at_bound: bool,
    pub loglik: f64,
    pub start_loglik: f64,
    pub n_obs: usize,
}

impl FitResult {
    pub fn n_junctions(&self) -> usize {
        self.junctions.len()
    }

    /// Means flattened in the `tissue * J + junction` order of `sigma_mu`.
    pub fn mu_vector(&self) -> DVector<f64> {
        let j = self.n_junctions();
        DVector::from_fn(2 * j, |i, _| self.mu_hat[(i / j, i % j)])
    }

    /// Sorted eigenvalues of `sigma_mu`, for diagnostics.
    pub fn sigma_eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.sigma_mu.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

/// Fits the model to pre-grouped observations.
pub fn fit_spots(spots: &SpotGroups) -> Result<(DVector<f64>, DMatrix<f64>, VarianceComponents)> {
    let best = maximize_profile(spots)?;
    let start = profile_at(spots, 0.0)?;
    let inv = Cholesky::new(best.info.clone())
        .ok_or(RcdError::SingularInformation)?
        .inverse();
    let mut cov = inv * best.tau2;
    cov = (&cov + cov.transpose()) * 0.5;
    Ok((best.beta.clone(), cov, components(&best, &start)))
}

pub fn fit_set(dataset: &Dataset, set: &IncompatibleSet, tissues: (&str, &str)) -> Result<FitResult> {
    let spots = collect_spots(dataset, set, tissues)?;
    let (beta, cov, vc) = fit_spots(&spots)?;
    let j = set.members.len();
    Ok(FitResult {
        set_id: set.set_id.clone(),
        gene: set.gene.clone(),
        tissues: (tissues.0.to_string(), tissues.1.to_string()),
        junctions: set.member_ids().map(str::to_string).collect(),
        mu_hat: DMatrix::from_fn(2, j, |t, k| beta[t * j + k]),
        sigma_mu: cov,
        var_spot: vc.var_spot,
        var_resid: vc.var_resid,
        rho: vc.rho,
        rho_at_bound: vc.at_upper_bound,
        loglik: vc.loglik,
        start_loglik: vc.start_loglik,
        n_obs: spots.n_obs(),
    })
}
