//! Synthetic two-color junction data with optional sigmoid saturation, and the
//! false-positive, power and confounding studies built on it.
//!
//! Each simulated set is one gene with `J` mutually incompatible junctions
//! measured on `n_arrays` arrays in a balanced dye-swap reference design
//! (normal tissue `N` against tumor `C`). Cell means on the log2 scale are
//! `baseline + alpha_t + log2(prevalence_tj)`; the tumor shift `alpha_C` is a
//! standard normal log fold change and `alpha_N = 0`. In the nonlinear
//! scenarios the mean surface passes through [`sigmoid_transform`] before
//! Gaussian noise is added. Spot effects are not simulated.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anosva::fit_anosva;
use crate::data::{ArrayChannelAssignment, Channel, Dataset, IntensityRecord, JunctionProbe};
use crate::error::{RcdError, Result};
use crate::fdr::{lfdr, DEFAULT_LAMBDA, DEFAULT_LFDR_BINS};
use crate::junctions::{build_sets, IncompatibleSet};
use crate::mixed_model::fit_set;
use crate::rank_change::{rank_change_probability, DEFAULT_KAPPA};
use crate::rng::{self, StreamRng};
use crate::stats::spearman;

pub const NORMAL: &str = "N";
pub const TUMOR: &str = "C";
pub const DEFAULT_RESID_SD: f64 = 0.22;
pub const DEFAULT_TISSUE_SD: f64 = 1.0;
pub const DEFAULT_N_ARRAYS: usize = 12;
pub const DEFAULT_P_CUTOFF: f64 = 0.05;

/// Logistic response `w / (1 + exp(-(x - mu_star) / sigma_star)) + delta_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidParams {
    pub w: f64,
    pub delta_min: f64,
    pub mu_star: f64,
    pub sigma_star: f64,
}

impl SigmoidParams {
    /// Picks `sigma_star = w / 4`, the scale giving unit slope at `mu_star`.
    pub fn with_unit_slope(w: f64, delta_min: f64, mu_star: f64) -> Result<Self> {
        if !(w > 0.0 && w.is_finite()) {
            return Err(RcdError::InvalidArgument(format!("dynamic range width must be positive, got {w}")));
        }
        Ok(Self {
            w,
            delta_min,
            mu_star,
            sigma_star: w / 4.0,
        })
    }
}

impl Default for SigmoidParams {
    /// Dynamic range of the glioblastoma arrays: width 9.2, minimum 6.3,
    /// midpoint 10.9 (log2 scale).
    fn default() -> Self {
        Self {
            w: 9.2,
            delta_min: 6.3,
            mu_star: 10.9,
            sigma_star: 2.3,
        }
    }
}

pub fn sigmoid_transform(x: f64, p: &SigmoidParams) -> f64 {
    p.w / (1.0 + (-(x - p.mu_star) / p.sigma_star).exp()) + p.delta_min
}

pub fn sigmoid_slope(x: f64, p: &SigmoidParams) -> f64 {
    let s = 1.0 / (1.0 + (-(x - p.mu_star) / p.sigma_star).exp());
    p.w / p.sigma_star * s * (1.0 - s)
}

/// Distribution of the normal-tissue gene level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineDist {
    Uniform { low: f64, high: f64 },
    Fixed { value: f64 },
}

impl Default for BaselineDist {
    fn default() -> Self {
        BaselineDist::Uniform { low: 8.0, high: 14.0 }
    }
}

impl BaselineDist {
    fn sample(&self, rng: &mut StreamRng) -> f64 {
        match *self {
            BaselineDist::Uniform { low, high } => rng.sample(Uniform::new(low, high).expect("valid range")),
            BaselineDist::Fixed { value } => value,
        }
    }
}

/// How junction prevalences are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JunctionModel {
    /// Prevalences ~ Dirichlet(alpha), shared by both tissues.
    Dirichlet { alpha: Vec<f64> },
    /// Two junctions at ratio `1 : y` in both tissues, `log2 y ~ U(low, high)`.
    /// Junction effects are `-log2(y) / 2` and `+log2(y) / 2`.
    RandomRatio { log2_low: f64, log2_high: f64 },
    /// Two junctions at `1 : y` in the normal tissue and `y : 1` in the tumor;
    /// the interaction contrast is `2 log2 y`.
    RankReversal { log2_y: f64 },
}

impl JunctionModel {
    pub fn n_junctions(&self) -> usize {
        match self {
            JunctionModel::Dirichlet { alpha } => alpha.len(),
            _ => 2,
        }
    }

    /// Per-tissue log2 prevalences and whether the set is a true DSE.
    fn sample(&self, rng: &mut StreamRng) -> ([Vec<f64>; 2], bool) {
        let ratio = |log2_y: f64| vec![-0.5 * log2_y, 0.5 * log2_y];
        match self {
            JunctionModel::Dirichlet { alpha } => {
                let draws: Vec<f64> = alpha
                    .iter()
                    .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
                    .collect();
                let total: f64 = draws.iter().sum();
                let beta: Vec<f64> = draws.iter().map(|g| (g / total).log2()).collect();
                ([beta.clone(), beta], false)
            }
            JunctionModel::RandomRatio { log2_low, log2_high } => {
                let l = if log2_high > log2_low {
                    rng.sample(Uniform::new(*log2_low, *log2_high).expect("valid range"))
                } else {
                    *log2_low
                };
                let beta = ratio(l);
                ([beta.clone(), beta], false)
            }
            JunctionModel::RankReversal { log2_y } => {
                let beta = ratio(*log2_y);
                let reversed = vec![beta[1], beta[0]];
                ([beta, reversed], *log2_y != 0.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub nonlinear: bool,
    pub n_arrays: usize,
    pub tissue_sd: f64,
    pub resid_sd: f64,
    pub junctions: JunctionModel,
    pub baseline: BaselineDist,
    pub sigmoid: SigmoidParams,
}

impl Scenario {
    /// Null scenario with Dirichlet(1, ..., 1) prevalences on 12 arrays.
    pub fn null(n_junctions: usize, nonlinear: bool) -> Self {
        Self {
            name: format!(
                "{n_junctions}_junction_{}",
                if nonlinear { "nonlinear" } else { "linear" }
            ),
            nonlinear,
            n_arrays: DEFAULT_N_ARRAYS,
            tissue_sd: DEFAULT_TISSUE_SD,
            resid_sd: DEFAULT_RESID_SD,
            junctions: JunctionModel::Dirichlet {
                alpha: vec![1.0; n_junctions],
            },
            baseline: BaselineDist::default(),
            sigmoid: SigmoidParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_arrays < 2 || self.n_arrays % 2 != 0 {
            return Err(RcdError::InvalidArgument(format!(
                "n_arrays must be even and >= 2 for a balanced dye swap, got {}",
                self.n_arrays
            )));
        }
        if self.junctions.n_junctions() < 2 {
            return Err(RcdError::InvalidArgument("need at least two junctions".into()));
        }
        if !(self.resid_sd > 0.0 && self.tissue_sd >= 0.0) {
            return Err(RcdError::InvalidArgument("standard deviations must be positive".into()));
        }
        Ok(())
    }

    pub fn n_junctions(&self) -> usize {
        self.junctions.n_junctions()
    }
}

/// The four null scenarios: 2 or 3 junctions, linear or sigmoid response.
pub fn fpr_scenarios() -> Vec<Scenario> {
    vec![
        Scenario::null(2, false),
        Scenario::null(2, true),
        Scenario::null(3, false),
        Scenario::null(3, true),
    ]
}

/// A simulated dataset with its single incompatible set and ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedSet {
    pub dataset: Dataset,
    pub set: IncompatibleSet,
    pub is_dse: bool,
    pub tissue_effect: f64,
    pub baseline: f64,
    /// Expected intensities before noise, `[normal, tumor]` by junction.
    pub means: [Vec<f64>; 2],
}

pub fn generate_dataset(scenario: &Scenario, rng: &mut StreamRng) -> Result<SimulatedSet> {
    scenario.validate()?;
    let j = scenario.n_junctions();
    let baseline = scenario.baseline.sample(rng);
    let tissue_effect = if scenario.tissue_sd > 0.0 {
        rng.sample(Normal::new(0.0, scenario.tissue_sd).expect("valid sd"))
    } else {
        0.0
    };
    let (beta, is_dse) = scenario.junctions.sample(rng);
    let alpha = [0.0, tissue_effect];
    let means: [Vec<f64>; 2] = [0, 1].map(|t| {
        beta[t]
            .iter()
            .map(|b| {
                let linear = baseline + alpha[t] + b;
                if scenario.nonlinear {
                    sigmoid_transform(linear, &scenario.sigmoid)
                } else {
                    linear
                }
            })
            .collect()
    });

    let probes: Vec<JunctionProbe> = (0..j)
        .map(|k| JunctionProbe::new(format!("j{}", k + 1), "SIM", 100, 200 + 10 * k as i64))
        .collect::<Result<_>>()?;
    let mut design = Vec::with_capacity(2 * scenario.n_arrays);
    let mut records = Vec::with_capacity(2 * j * scenario.n_arrays);
    let noise = Normal::new(0.0, scenario.resid_sd).expect("valid sd");
    for a in 0..scenario.n_arrays {
        let array_id = format!("a{:02}", a + 1);
        let (normal_dye, tumor_dye) = if a % 2 == 0 {
            (Channel::Cy3, Channel::Cy5)
        } else {
            (Channel::Cy5, Channel::Cy3)
        };
        for (tissue, dye) in [(NORMAL, normal_dye), (TUMOR, tumor_dye)] {
            design.push(ArrayChannelAssignment {
                array_id: array_id.clone(),
                channel: dye,
                tissue: tissue.to_string(),
                replicate: (a / 2 + 1) as u32,
            });
        }
        for (k, probe) in probes.iter().enumerate() {
            for (t, dye) in [(0, normal_dye), (1, tumor_dye)] {
                records.push(IntensityRecord {
                    probe_id: probe.probe_id.clone(),
                    array_id: array_id.clone(),
                    channel: dye,
                    value: means[t][k] + noise.sample(rng),
                });
            }
        }
    }
    let sets = build_sets(&probes, j);
    let set = sets
        .sets
        .into_iter()
        .next()
        .ok_or_else(|| RcdError::InvalidArgument("simulated junctions do not overlap".into()))?;
    Ok(SimulatedSet {
        dataset: Dataset::validate(probes, design, records)?,
        set,
        is_dse,
        tissue_effect,
        baseline,
        means,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudySettings {
    pub n_sims: usize,
    pub seed: u64,
    pub draws: usize,
    pub kappa: f64,
    pub p_cutoff: f64,
}

impl StudySettings {
    pub fn new(n_sims: usize, seed: u64) -> Self {
        Self {
            n_sims,
            seed,
            draws: crate::rank_change::DEFAULT_DRAWS,
            kappa: DEFAULT_KAPPA,
            p_cutoff: DEFAULT_P_CUTOFF,
        }
    }
}

/// Per-replicate results of both methods on one simulated set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub anosva_p: f64,
    /// Largest `max(U, D)` over the junctions of the set.
    pub rcd_max: f64,
    pub estimated_lfc: f64,
    pub true_lfc: f64,
    pub is_dse: bool,
}

pub fn evaluate(sim: &SimulatedSet, draws: usize, seed: u64, kappa: f64) -> Result<SimOutcome> {
    let tissues = (NORMAL, TUMOR);
    let fit = fit_set(&sim.dataset, &sim.set, tissues)?;
    let rc = rank_change_probability(&fit, draws, seed, kappa)?;
    let anosva = fit_anosva(&sim.dataset, &sim.set, tissues)?;
    Ok(SimOutcome {
        anosva_p: anosva.p_value(),
        rcd_max: rc.calls.iter().map(|c| c.max_prob()).fold(0.0, f64::max),
        estimated_lfc: anosva.log_fold_change(),
        true_lfc: sim.tissue_effect,
        is_dse: sim.is_dse,
    })
}

/// Simulates and evaluates `n_sims` replicates of one scenario in parallel.
/// Replicate `r` draws from the stream `(seed, cell_id, r)`.
pub fn simulate_outcomes(scenario: &Scenario, cell_id: &str, settings: &StudySettings) -> Result<Vec<SimOutcome>> {
    scenario.validate()?;
    (0..settings.n_sims)
        .into_par_iter()
        .map(|r| {
            let rep = r.to_string();
            let mut data_rng = rng::stream(settings.seed, &[cell_id, &rep, "data"]);
            let sim = generate_dataset(scenario, &mut data_rng)?;
            let mc_seed = rng::stream_seed(settings.seed, &[cell_id, &rep, "rcd"]);
            evaluate(&sim, settings.draws, mc_seed, settings.kappa)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRates {
    pub anosva: f64,
    pub rcd: f64,
}

pub fn detection_rates(outcomes: &[SimOutcome], settings: &StudySettings) -> DetectionRates {
    let n = outcomes.len().max(1) as f64;
    DetectionRates {
        anosva: outcomes.iter().filter(|o| o.anosva_p < settings.p_cutoff).count() as f64 / n,
        rcd: outcomes.iter().filter(|o| o.rcd_max > settings.kappa).count() as f64 / n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FprRow {
    pub scenario: String,
    pub anosva_fpr: f64,
    pub rcd_fpr: f64,
    pub n_sims: usize,
    /// Larger of the two binomial standard errors.
    pub mc_se: f64,
}

pub fn run_fpr_study(scenarios: &[Scenario], settings: &StudySettings) -> Result<Vec<FprRow>> {
    scenarios
        .iter()
        .map(|s| {
            if !matches!(s.junctions, JunctionModel::Dirichlet { .. } | JunctionModel::RandomRatio { .. }) {
                return Err(RcdError::InvalidArgument(format!("scenario {} is not a null scenario", s.name)));
            }
            let outcomes = simulate_outcomes(s, &format!("fpr/{}", s.name), settings)?;
            let rates = detection_rates(&outcomes, settings);
            let n = outcomes.len() as f64;
            let se = |p: f64| (p * (1.0 - p) / n).sqrt();
            Ok(FprRow {
                scenario: s.name.clone(),
                anosva_fpr: rates.anosva,
                rcd_fpr: rates.rcd,
                n_sims: outcomes.len(),
                mc_se: se(rates.anosva).max(se(rates.rcd)),
            })
        })
        .collect()
}

/// Effect and sample-size grid of the power study. Effects are `log2 y` for
/// a `1:y -> y:1` reversal; zero means no reversal, with the junction ratio
/// drawn from the response-specific null range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerGrid {
    pub nonlinear_log2_y: Vec<f64>,
    pub linear_log2_y: Vec<f64>,
    pub n_arrays: Vec<usize>,
    pub nonlinear_null_range: (f64, f64),
    pub linear_null_range: (f64, f64),
}

impl Default for PowerGrid {
    fn default() -> Self {
        let log2 = |v: &[f64]| v.iter().map(|x| x.log2()).collect::<Vec<_>>();
        Self {
            nonlinear_log2_y: log2(&[1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0]),
            linear_log2_y: log2(&[1.0, 1.1, 1.2, 1.3, 1.4, 1.5]),
            n_arrays: vec![4, 6, 8, 10, 12],
            nonlinear_null_range: (1.5f64.log2(), 8f64.log2()),
            linear_null_range: (1.05f64.log2(), 1.5f64.log2()),
        }
    }
}

impl PowerGrid {
    pub fn validate(&self) -> Result<()> {
        if self.n_arrays.is_empty() || (self.nonlinear_log2_y.is_empty() && self.linear_log2_y.is_empty()) {
            return Err(RcdError::InvalidArgument("power grid is empty".into()));
        }
        Ok(())
    }

    /// Scenario for one grid cell.
    pub fn scenario(&self, nonlinear: bool, log2_y: f64, n_arrays: usize) -> Scenario {
        let (lo, hi) = if nonlinear {
            self.nonlinear_null_range
        } else {
            self.linear_null_range
        };
        let junctions = if log2_y == 0.0 {
            JunctionModel::RandomRatio {
                log2_low: lo,
                log2_high: hi,
            }
        } else {
            JunctionModel::RankReversal { log2_y }
        };
        Scenario {
            name: format!(
                "power_{}_y{}_n{}",
                if nonlinear { "nonlinear" } else { "linear" },
                log2_y,
                n_arrays
            ),
            nonlinear,
            n_arrays,
            tissue_sd: DEFAULT_TISSUE_SD,
            resid_sd: DEFAULT_RESID_SD,
            junctions,
            baseline: BaselineDist::default(),
            sigmoid: SigmoidParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub method: String,
    pub response: String,
    /// Interaction contrast `2 log2 y`.
    pub effect_log2: f64,
    pub n: usize,
    pub detect_rate: f64,
    pub n_sims: usize,
}

pub fn run_power_study(grid: &PowerGrid, settings: &StudySettings) -> Result<Vec<PowerRow>> {
    grid.validate()?;
    let mut rows = Vec::new();
    for (nonlinear, effects) in [(false, &grid.linear_log2_y), (true, &grid.nonlinear_log2_y)] {
        for &log2_y in effects.iter() {
            for &n in &grid.n_arrays {
                let scenario = grid.scenario(nonlinear, log2_y, n);
                let outcomes = simulate_outcomes(&scenario, &scenario.name, settings)?;
                let rates = detection_rates(&outcomes, settings);
                let response = if nonlinear { "nonlinear" } else { "linear" };
                for (method, rate) in [("anosva", rates.anosva), ("rcd", rates.rcd)] {
                    rows.push(PowerRow {
                        method: method.to_string(),
                        response: response.to_string(),
                        effect_log2: 2.0 * log2_y,
                        n,
                        detect_rate: rate,
                        n_sims: outcomes.len(),
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// Dependence of each method's evidence on differential expression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfoundingReport {
    pub n_sets: usize,
    /// Spearman correlation of `|lfc|` with ANOSVA `-ln lfdr`.
    pub anosva_spearman: f64,
    /// Spearman correlation of `|lfc|` with RCD `-ln(1 - max(U, D))`.
    pub rcd_spearman: f64,
}

/// Runs null sets of `scenario` and correlates the estimated absolute log
/// fold change with the evidence for splicing reported by each method.
pub fn run_confounding_study(scenario: &Scenario, settings: &StudySettings) -> Result<ConfoundingReport> {
    let outcomes = simulate_outcomes(scenario, &format!("confounding/{}", scenario.name), settings)?;
    let pvals: Vec<f64> = outcomes.iter().map(|o| o.anosva_p).collect();
    let local = lfdr(&pvals, DEFAULT_LFDR_BINS, DEFAULT_LAMBDA)?;
    let abs_lfc: Vec<f64> = outcomes.iter().map(|o| o.estimated_lfc.abs()).collect();
    let anosva_evidence: Vec<f64> = local.lfdr.iter().map(|l| -l.max(f64::MIN_POSITIVE).ln()).collect();
    let floor = 0.5 / settings.draws as f64;
    let rcd_evidence: Vec<f64> = outcomes.iter().map(|o| -(1.0 - o.rcd_max).max(floor).ln()).collect();
    Ok(ConfoundingReport {
        n_sets: outcomes.len(),
        anosva_spearman: spearman(&abs_lfc, &anosva_evidence)?,
        rcd_spearman: spearman(&abs_lfc, &rcd_evidence)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sigmoid_has_unit_slope_at_midpoint() {
        let p = SigmoidParams::default();
        assert_eq!(p, SigmoidParams::with_unit_slope(9.2, 6.3, 10.9).unwrap());
        assert!((sigmoid_transform(p.mu_star, &p) - 10.9).abs() < 1e-12);
        assert!((sigmoid_slope(p.mu_star, &p) - 1.0).abs() < 1e-9);
        // central finite difference
        let h = 1e-5;
        let fd = (sigmoid_transform(p.mu_star + h, &p) - sigmoid_transform(p.mu_star - h, &p)) / (2.0 * h);
        assert!((fd - 1.0).abs() < 1e-9);
        assert!((sigmoid_transform(-1e3, &p) - 6.3).abs() < 1e-12);
        assert!(sigmoid_transform(10.0, &p) < sigmoid_transform(11.0, &p));
        assert!(SigmoidParams::with_unit_slope(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn linear_null_means_are_additive() {
        let mut s = Scenario::null(3, false);
        s.resid_sd = 1e-9;
        let mut rng = rng::from_seed(4);
        let sim = generate_dataset(&s, &mut rng).unwrap();
        assert!(!sim.is_dse);
        let diff: Vec<f64> = (0..3).map(|k| sim.means[1][k] - sim.means[0][k]).collect();
        for d in &diff {
            assert!((d - sim.tissue_effect).abs() < 1e-12);
        }
        let prevalence: f64 = sim.means[0].iter().map(|m| (m - sim.baseline).exp2()).sum();
        assert!((prevalence - 1.0).abs() < 1e-12);
        assert_eq!(sim.dataset.summary().records, 2 * 3 * 12);
        assert!(sim.dataset.design().iter().filter(|a| a.tissue == NORMAL && a.channel == Channel::Cy3).count() == 6);
    }

    #[test]
    fn reversal_effect_size() {
        let m = JunctionModel::RankReversal { log2_y: 1.0 };
        let mut rng = rng::from_seed(0);
        let ([b1, b2], dse) = m.sample(&mut rng);
        assert!(dse);
        // ratio 1:2 flips to 2:1; interaction contrast 2 log2(2) = 2
        assert!(((b1[1] - b1[0]) - (b2[1] - b2[0]) - 2.0).abs() < 1e-12);
        assert!(((b1[1] - b1[0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generation_is_reproducible() {
        let s = Scenario::null(2, true);
        let a = generate_dataset(&s, &mut rng::stream(9, &["x"])).unwrap();
        let b = generate_dataset(&s, &mut rng::stream(9, &["x"])).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let c = generate_dataset(&s, &mut rng::stream(10, &["x"])).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn odd_array_counts_rejected() {
        let mut s = Scenario::null(2, false);
        s.n_arrays = 5;
        assert!(generate_dataset(&s, &mut rng::from_seed(1)).is_err());
    }

    #[test]
    fn nonlinear_values_stay_in_dynamic_range() {
        let mut s = Scenario::null(3, true);
        s.resid_sd = 1e-9;
        for seed in 0..20 {
            let sim = generate_dataset(&s, &mut rng::from_seed(seed)).unwrap();
            assert!(sim.dataset.intensities().iter().all(|r| r.value > 6.3 - 1e-6 && r.value < 15.5 + 1e-6));
        }
    }
}
