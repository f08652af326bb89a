//! Whole-dataset analysis: build sets, fit every set for every tissue pair,
//! call rank changes, run ANOSVA and attach FDR estimates. Also renders the
//! result tables.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anosva::{fit_anosva, AnosvaResult};
use crate::data::Dataset;
use crate::error::{RcdError, Result};
use crate::fdr::{lfdr, qvalues, FdrMethod, DEFAULT_LAMBDA, DEFAULT_LFDR_BINS};
use crate::junctions::{build_sets, IncompatibleSet, SetCollection, DEFAULT_MAX_SET_SIZE};
use crate::mixed_model::{fit_set, FitResult};
use crate::rank_change::{
    rank_change_probability, validate_kappa, RankCall, DEFAULT_DRAWS, DEFAULT_KAPPA, MIN_DRAWS,
};
use crate::rng::stream_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub kappa: f64,
    pub draws: usize,
    pub seed: u64,
    pub max_set_size: usize,
    /// `None` analyzes every pair of tissues in the design.
    pub tissue_pairs: Option<Vec<(String, String)>>,
    pub fdr_method: FdrMethod,
    pub lambda: f64,
    pub lfdr_bins: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            kappa: DEFAULT_KAPPA,
            draws: DEFAULT_DRAWS,
            seed: 0,
            max_set_size: DEFAULT_MAX_SET_SIZE,
            tissue_pairs: None,
            fdr_method: FdrMethod::Storey,
            lambda: DEFAULT_LAMBDA,
            lfdr_bins: DEFAULT_LFDR_BINS,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        validate_kappa(self.kappa)?;
        if self.draws < MIN_DRAWS {
            return Err(RcdError::InvalidArgument(format!(
                "need at least {MIN_DRAWS} draws, got {}",
                self.draws
            )));
        }
        if self.max_set_size < 2 {
            return Err(RcdError::InvalidArgument("max set size must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(RcdError::InvalidArgument(format!("lambda must lie in [0, 1), got {}", self.lambda)));
        }
        if self.lfdr_bins == 0 {
            return Err(RcdError::InvalidArgument("lfdr needs at least one bin".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetFailure {
    pub set_id: String,
    pub gene: String,
    pub tissues: (String, String),
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnosvaCall {
    pub result: AnosvaResult,
    pub q: f64,
    pub lfdr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub set_id: String,
    pub tissues: (String, String),
    pub rho: f64,
    pub var_spot: f64,
    pub var_resid: f64,
    pub rho_at_bound: bool,
    pub loglik: f64,
    pub jitter: f64,
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub sets: SetCollection,
    pub tissue_pairs: Vec<(String, String)>,
    pub rcd_calls: Vec<RankCall>,
    pub anosva_calls: Vec<AnosvaCall>,
    pub fits: Vec<FitSummary>,
    pub failures: Vec<SetFailure>,
    /// Set-by-pair tasks attempted.
    pub n_tasks: usize,
    pub warnings: Vec<String>,
}

impl Analysis {
    /// Fraction of tasks with at least one failed stage.
    pub fn failure_rate(&self) -> f64 {
        if self.n_tasks == 0 {
            return 0.0;
        }
        let mut failed: Vec<(&str, &(String, String))> =
            self.failures.iter().map(|f| (f.set_id.as_str(), &f.tissues)).collect();
        failed.sort();
        failed.dedup();
        failed.len() as f64 / self.n_tasks as f64
    }
}

/// All unordered pairs of the design's tissues, each in sorted order.
pub fn all_tissue_pairs(dataset: &Dataset) -> Vec<(String, String)> {
    let t = dataset.tissues();
    let mut out = Vec::new();
    for i in 0..t.len() {
        for k in i + 1..t.len() {
            out.push((t[i].clone(), t[k].clone()));
        }
    }
    out
}

/// Monte-Carlo seed of one set and tissue pair.
pub fn task_seed(master: u64, set_id: &str, tissues: (&str, &str)) -> u64 {
    let (a, b) = if tissues.0 <= tissues.1 {
        (tissues.0, tissues.1)
    } else {
        (tissues.1, tissues.0)
    };
    stream_seed(master, &[set_id, a, b])
}

struct TaskOutput {
    fit: Option<(FitResult, f64)>,
    calls: Vec<RankCall>,
    anosva: Option<AnosvaResult>,
    failures: Vec<SetFailure>,
}

fn run_task(dataset: &Dataset, set: &IncompatibleSet, pair: &(String, String), cfg: &AnalysisConfig) -> TaskOutput {
    let tissues = (pair.0.as_str(), pair.1.as_str());
    let fail = |stage: &str, e: RcdError| SetFailure {
        set_id: set.set_id.clone(),
        gene: set.gene.clone(),
        tissues: pair.clone(),
        stage: stage.to_string(),
        message: e.to_string(),
    };
    let mut out = TaskOutput {
        fit: None,
        calls: Vec::new(),
        anosva: None,
        failures: Vec::new(),
    };
    match fit_set(dataset, set, tissues).and_then(|fit| {
        let rc = rank_change_probability(&fit, cfg.draws, task_seed(cfg.seed, &set.set_id, tissues), cfg.kappa)?;
        Ok((fit, rc))
    }) {
        Ok((fit, rc)) => {
            out.calls = rc.calls;
            out.fit = Some((fit, rc.jitter));
        }
        Err(e) => out.failures.push(fail("rcd", e)),
    }
    match fit_anosva(dataset, set, tissues) {
        Ok(a) => out.anosva = Some(a),
        Err(e) => out.failures.push(fail("anosva", e)),
    }
    out
}

/// Runs both methods on every set and tissue pair. Parallel over tasks on the
/// current rayon pool; output order follows sets, then pairs.
pub fn analyze(dataset: &Dataset, cfg: &AnalysisConfig) -> Result<Analysis> {
    cfg.validate()?;
    let tissues = dataset.tissues();
    let pairs = match &cfg.tissue_pairs {
        Some(p) => {
            for (a, b) in p {
                for t in [a, b] {
                    if !tissues.contains(t) {
                        return Err(RcdError::InvalidArgument(format!("tissue {t} does not occur in the design")));
                    }
                }
                if a == b {
                    return Err(RcdError::InvalidArgument(format!("tissue pair {a},{b} repeats a tissue")));
                }
            }
            p.clone()
        }
        None => all_tissue_pairs(dataset),
    };
    if pairs.is_empty() {
        return Err(RcdError::InvalidArgument("design has fewer than two tissues".into()));
    }
    let sets = build_sets(dataset.probes(), cfg.max_set_size);
    let mut warnings = Vec::new();
    for o in &sets.oversized {
        warnings.push(format!(
            "gene {}: set anchored at {} has {} junctions, above the limit of {}",
            o.gene, o.anchor, o.size, cfg.max_set_size
        ));
    }
    let tasks: Vec<(&IncompatibleSet, &(String, String))> =
        sets.sets.iter().flat_map(|s| pairs.iter().map(move |p| (s, p))).collect();
    let outputs: Vec<TaskOutput> = tasks.par_iter().map(|(s, p)| run_task(dataset, s, p, cfg)).collect();

    let mut rcd_calls = Vec::new();
    let mut fits = Vec::new();
    let mut anosva = Vec::new();
    let mut failures = Vec::new();
    for o in outputs {
        rcd_calls.extend(o.calls);
        if let Some((f, jitter)) = o.fit {
            if jitter > 0.0 {
                warnings.push(format!(
                    "set {} ({},{}): covariance repaired before sampling",
                    f.set_id, f.tissues.0, f.tissues.1
                ));
            }
            fits.push(FitSummary {
                set_id: f.set_id,
                tissues: f.tissues,
                rho: f.rho,
                var_spot: f.var_spot,
                var_resid: f.var_resid,
                rho_at_bound: f.rho_at_bound,
                loglik: f.loglik,
                jitter,
            });
        }
        anosva.extend(o.anosva);
        failures.extend(o.failures);
    }

    let mut anosva_calls: Vec<AnosvaCall> = anosva
        .into_iter()
        .map(|result| AnosvaCall {
            result,
            q: f64::NAN,
            lfdr: f64::NAN,
        })
        .collect();
    // FDR within each tissue pair
    for pair in &pairs {
        let idx: Vec<usize> = (0..anosva_calls.len())
            .filter(|&i| &anosva_calls[i].result.tissues == pair)
            .collect();
        let pvals: Vec<f64> = idx
            .iter()
            .map(|&i| anosva_calls[i].result.p_value())
            .filter(|p| !p.is_nan())
            .collect();
        if pvals.len() != idx.len() || pvals.is_empty() {
            if !idx.is_empty() {
                warnings.push(format!("tissue pair {},{}: undefined ANOSVA p-values, FDR skipped", pair.0, pair.1));
            }
            continue;
        }
        let q = qvalues(&pvals, cfg.fdr_method, cfg.lambda)?;
        let l = lfdr(&pvals, cfg.lfdr_bins, cfg.lambda)?;
        if l.fallback {
            warnings.push(format!(
                "tissue pair {},{}: only {} sets, lfdr column holds q-values",
                pair.0,
                pair.1,
                pvals.len()
            ));
        }
        for (k, &i) in idx.iter().enumerate() {
            anosva_calls[i].q = q.q[k];
            anosva_calls[i].lfdr = l.lfdr[k];
        }
    }

    let n_tasks = tasks.len();
    drop(tasks);
    Ok(Analysis {
        sets,
        tissue_pairs: pairs,
        rcd_calls,
        anosva_calls,
        fits,
        failures,
        n_tasks,
        warnings,
    })
}

/// Shortest round-trip representation; exponent form for small magnitudes.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:?}")
    }
}

pub fn sets_table(sets: &SetCollection) -> String {
    let mut s = String::from("set_id\tgene\tanchor_probe\tmember_probes\n");
    for set in &sets.sets {
        let members: Vec<&str> = set.member_ids().collect();
        let _ = writeln!(s, "{}\t{}\t{}\t{}", set.set_id, set.gene, set.anchor, members.join(","));
    }
    s
}

pub fn rcd_table(calls: &[RankCall]) -> String {
    let mut s = String::from("set_id\tgene\tjunction\tt1\tt2\tU\tD\tE\tcall\tM\tseed\n");
    for c in calls {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.set_id,
            c.gene,
            c.junction,
            c.tissues.0,
            c.tissues.1,
            fmt_f64(c.u),
            fmt_f64(c.d),
            fmt_f64(c.e),
            c.call,
            c.draws,
            c.seed
        );
    }
    s
}

pub fn anosva_table(calls: &[AnosvaCall]) -> String {
    let mut s = String::from("set_id\tgene\tt1\tt2\tF\tdf1\tdf2\tp\tq\tlfdr\n");
    for c in calls {
        let r = &c.result;
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.set_id,
            r.gene,
            r.tissues.0,
            r.tissues.1,
            fmt_f64(r.f_stat()),
            r.anova.df.0,
            r.anova.df.1,
            fmt_f64(r.p_value()),
            fmt_f64(c.q),
            fmt_f64(c.lfdr)
        );
    }
    s
}

pub fn fits_table(fits: &[FitSummary]) -> String {
    let mut s = String::from("set_id\tt1\tt2\trho\tvar_spot\tvar_resid\trho_at_bound\tloglik\tjitter\n");
    for f in fits {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            f.set_id,
            f.tissues.0,
            f.tissues.1,
            fmt_f64(f.rho),
            fmt_f64(f.var_spot),
            fmt_f64(f.var_resid),
            f.rho_at_bound,
            fmt_f64(f.loglik),
            fmt_f64(f.jitter)
        );
    }
    s
}

pub fn failures_table(failures: &[SetFailure]) -> String {
    let mut s = String::from("set_id\tgene\tt1\tt2\tstage\tmessage\n");
    for f in failures {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}",
            f.set_id,
            f.gene,
            f.tissues.0,
            f.tissues.1,
            f.stage,
            f.message.replace(['\t', '\n'], " ")
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ArrayChannelAssignment, Channel, IntensityRecord, JunctionProbe};
    use crate::rng;
    use rand::Rng;

    /// Two genes, three tissues in a loop design over six arrays.
    fn toy() -> Dataset {
        let probes = vec![
            JunctionProbe::new("g1a", "G1", 100, 200).unwrap(),
            JunctionProbe::new("g1b", "G1", 150, 250).unwrap(),
            JunctionProbe::new("g2a", "G2", 10, 50).unwrap(),
            JunctionProbe::new("g2b", "G2", 40, 90).unwrap(),
            JunctionProbe::new("g2c", "G2", 80, 120).unwrap(),
        ];
        let pairs = [("X", "Y"), ("Y", "X"), ("Y", "Z"), ("Z", "Y"), ("X", "Z"), ("Z", "X")];
        let mut design = Vec::new();
        let mut rec = Vec::new();
        let mut r = rng::from_seed(5);
        for (a, (t3, t5)) in pairs.iter().enumerate() {
            let array = format!("arr{a}");
            for (ch, t) in [(Channel::Cy3, t3), (Channel::Cy5, t5)] {
                design.push(ArrayChannelAssignment {
                    array_id: array.clone(),
                    channel: ch,
                    tissue: t.to_string(),
                    replicate: 1,
                });
                for (k, p) in probes.iter().enumerate() {
                    let shift = if *t == "Z" && k == 0 { 2.0 } else { 0.0 };
                    rec.push(IntensityRecord {
                        probe_id: p.probe_id.clone(),
                        array_id: array.clone(),
                        channel: ch,
                        value: 8.0 + k as f64 * 0.5 + shift + r.random::<f64>() * 0.3,
                    });
                }
            }
        }
        Dataset::validate(probes, design, rec).unwrap()
    }

    fn config(seed: u64) -> AnalysisConfig {
        AnalysisConfig {
            draws: 2000,
            seed,
            ..AnalysisConfig::default()
        }
    }

    #[test]
    fn all_pairs_by_default() {
        let d = toy();
        let a = analyze(&d, &config(7)).unwrap();
        assert_eq!(a.tissue_pairs.len(), 3);
        // G1: one set; G2: {a,b}, {a,b,c}? a and c do not meet, so {a,b}, {a,b,c} from b, {b,c}
        assert_eq!(a.n_tasks, a.sets.sets.len() * 3);
        assert!(a.failures.is_empty(), "{:?}", a.failures);
        let n_rows: usize = a.sets.sets.iter().map(|s| s.len()).sum::<usize>() * 3;
        assert_eq!(a.rcd_calls.len(), n_rows);
        assert_eq!(a.anosva_calls.len(), a.n_tasks);
        assert!(a.anosva_calls.iter().all(|c| (0.0..=1.0).contains(&c.q) && (0.0..=1.0).contains(&c.lfdr)));
    }

    #[test]
    fn same_seed_same_tables() {
        let d = toy();
        let a = analyze(&d, &config(7)).unwrap();
        let b = analyze(&d, &config(7)).unwrap();
        assert_eq!(rcd_table(&a.rcd_calls), rcd_table(&b.rcd_calls));
        assert_eq!(anosva_table(&a.anosva_calls), anosva_table(&b.anosva_calls));
    }

    #[test]
    fn restricted_pairs() {
        let d = toy();
        let mut cfg = config(1);
        cfg.tissue_pairs = Some(vec![("Z".into(), "X".into())]);
        let a = analyze(&d, &cfg).unwrap();
        assert!(a.rcd_calls.iter().all(|c| c.tissues == ("Z".to_string(), "X".to_string())));
        cfg.tissue_pairs = Some(vec![("Q".into(), "X".into())]);
        assert!(analyze(&d, &cfg).is_err());
    }

    #[test]
    fn task_seed_ignores_pair_order() {
        assert_eq!(task_seed(3, "s", ("A", "B")), task_seed(3, "s", ("B", "A")));
        assert_ne!(task_seed(3, "s", ("A", "B")), task_seed(3, "t", ("A", "B")));
    }

    #[test]
    fn table_headers() {
        assert!(rcd_table(&[]).starts_with("set_id\tgene\tjunction\tt1\tt2\tU\tD\tE\tcall\tM\tseed"));
        assert!(anosva_table(&[]).starts_with("set_id\tgene\tt1\tt2\tF\tdf1\tdf2\tp\tq\tlfdr"));
        assert_eq!(fmt_f64(0.5), "0.5");
        assert_eq!(fmt_f64(1e-20), "1e-20");
        assert_eq!(fmt_f64(1.0), "1.0");
    }
}
