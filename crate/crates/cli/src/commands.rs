use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use rcd_core::data::tsv::{parse_design, parse_intensities, parse_probes};
use rcd_core::data::Dataset;
use rcd_core::enrich::{self, known_genes, parse_gene_list, CallTable, Cutoff};
use rcd_core::junctions::build_sets as group_sets;
use rcd_core::pipeline::{self, fmt_f64, AnalysisConfig};
use rcd_core::rank_change::Call;
use rcd_core::simulate::{
    fpr_scenarios, run_confounding_study, run_fpr_study, run_power_study, PowerGrid, Scenario, StudySettings,
};
use rcd_core::RcdError;

use crate::output::{digest, now, RunManifest, Staged};
use crate::{AnalyzeArgs, BuildSetsArgs, EnrichArgs, FailureThreshold, SimulateArgs, Study};

pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    if threads == Some(0) {
        return Err(RcdError::InvalidArgument("--threads must be at least 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .context("cannot start worker threads")
}

fn resolve_seed(seed: Option<u64>, manifest: &mut RunManifest) -> u64 {
    let (seed, source) = match seed {
        Some(s) => (s, "flag"),
        None => (rand::random::<u64>(), "entropy"),
    };
    manifest.seed = Some(seed);
    manifest.seed_source = Some(source.to_string());
    seed
}

fn report(written: &[std::path::PathBuf]) {
    for p in written {
        eprintln!("wrote {}", p.display());
    }
}

pub fn build_sets(args: &BuildSetsArgs) -> Result<()> {
    let mut manifest = RunManifest::new("build-sets", now());
    if args.max_set_size < 2 {
        return Err(RcdError::InvalidArgument("--max-set-size must be at least 2".into()).into());
    }
    let probes = parse_probes(&args.probes)?;
    manifest.inputs.push(digest(&args.probes)?);
    manifest.parameters = json!({ "max_set_size": args.max_set_size });
    let sets = group_sets(&probes, args.max_set_size);
    for o in &sets.oversized {
        manifest.warnings.push(format!(
            "gene {}: set anchored at {} has {} junctions, above the limit of {}",
            o.gene, o.anchor, o.size, args.max_set_size
        ));
    }
    manifest.count("sets", sets.sets.len());
    manifest.count("oversized", sets.oversized.len());
    manifest.count("singletons", sets.singletons);
    manifest.count("size_distribution", json!(sets.size_distribution()));

    let mut staged = Staged::new(&args.out)?;
    staged.add("sets.tsv", pipeline::sets_table(&sets).as_bytes())?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    report(&manifest.finish(staged)?);
    Ok(())
}

fn parse_pairs(raw: &[String]) -> Result<Option<Vec<(String, String)>>> {
    if raw.is_empty() {
        return Ok(None);
    }
    raw.iter()
        .map(|s| match s.split(',').map(str::trim).collect::<Vec<_>>().as_slice() {
            [a, b] if !a.is_empty() && !b.is_empty() => Ok((a.to_string(), b.to_string())),
            _ => Err(RcdError::InvalidArgument(format!("--tissues expects t1,t2, got `{s}`")).into()),
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn load_dataset(args: &AnalyzeArgs, manifest: &mut RunManifest) -> Result<Dataset> {
    if !(args.floor > 0.0 && args.floor.is_finite()) {
        return Err(RcdError::InvalidArgument(format!("--floor must be positive, got {}", args.floor)).into());
    }
    let probes = parse_probes(&args.probes)?;
    let design = parse_design(&args.design)?;
    let values = parse_intensities(&args.intensities, args.log_input, args.floor)?;
    for p in [&args.probes, &args.design, &args.intensities] {
        manifest.inputs.push(digest(p)?);
    }
    manifest.warnings.extend(design.warnings.iter().cloned());
    Ok(Dataset::validate(probes, design.assignments, values)?)
}

pub fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let mut manifest = RunManifest::new("analyze", now());
    if !(0.0..=1.0).contains(&args.max_failures) {
        return Err(RcdError::InvalidArgument(format!(
            "--max-failures must lie in [0, 1], got {}",
            args.max_failures
        ))
        .into());
    }
    let seed = resolve_seed(args.seed, &mut manifest);
    let cfg = AnalysisConfig {
        kappa: args.kappa,
        draws: args.draws,
        seed,
        max_set_size: args.max_set_size,
        tissue_pairs: parse_pairs(&args.tissues)?,
        fdr_method: args.fdr_method.into(),
        lambda: args.lambda,
        lfdr_bins: args.lfdr_bins,
    };
    cfg.validate()?;
    let data = load_dataset(args, &mut manifest)?;
    manifest.parameters = json!({
        "kappa": cfg.kappa,
        "draws": cfg.draws,
        "max_set_size": cfg.max_set_size,
        "tissue_pairs": cfg.tissue_pairs,
        "fdr_method": cfg.fdr_method,
        "lambda": cfg.lambda,
        "lfdr_bins": cfg.lfdr_bins,
        "floor": args.floor,
        "log_input": args.log_input,
        "max_failures": args.max_failures,
    });

    let analysis = pipeline::analyze(&data, &cfg)?;
    let rate = analysis.failure_rate();
    if rate > args.max_failures {
        for f in &analysis.failures {
            eprintln!(
                "failed: set {} ({}) {},{} [{}]: {}",
                f.set_id, f.gene, f.tissues.0, f.tissues.1, f.stage, f.message
            );
        }
        return Err(FailureThreshold(format!(
            "{:.1}% of {} set fits failed, above --max-failures {}",
            100.0 * rate,
            analysis.n_tasks,
            args.max_failures
        ))
        .into());
    }
    manifest.warnings.extend(analysis.warnings.iter().cloned());
    for f in &analysis.failures {
        manifest.warnings.push(format!(
            "set {} ({},{}) {} failed: {}",
            f.set_id, f.tissues.0, f.tissues.1, f.stage, f.message
        ));
    }
    let count_calls = |c: Call| analysis.rcd_calls.iter().filter(|r| r.call == c).count();
    manifest.count("sets", analysis.sets.sets.len());
    manifest.count("oversized_sets", analysis.sets.oversized.len());
    manifest.count("tissue_pairs", analysis.tissue_pairs.len());
    manifest.count("tasks", analysis.n_tasks);
    manifest.count("failures", analysis.failures.len());
    manifest.count("rcd_rows", analysis.rcd_calls.len());
    manifest.count("rcd_up", count_calls(Call::Up));
    manifest.count("rcd_down", count_calls(Call::Down));
    manifest.count("anosva_rows", analysis.anosva_calls.len());
    manifest.count("rho_at_bound", analysis.fits.iter().filter(|f| f.rho_at_bound).count());

    let mut staged = Staged::new(&args.out)?;
    staged.add("sets.tsv", pipeline::sets_table(&analysis.sets).as_bytes())?;
    staged.add("rcd_calls.tsv", pipeline::rcd_table(&analysis.rcd_calls).as_bytes())?;
    staged.add("anosva_calls.tsv", pipeline::anosva_table(&analysis.anosva_calls).as_bytes())?;
    if !analysis.failures.is_empty() {
        staged.add("failures.tsv", pipeline::failures_table(&analysis.failures).as_bytes())?;
    }
    if args.diagnostics {
        staged.add("fits.tsv", pipeline::fits_table(&analysis.fits).as_bytes())?;
    }
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    report(&manifest.finish(staged)?);
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut manifest = RunManifest::new("simulate", now());
    if args.sims == 0 {
        return Err(RcdError::InvalidArgument("--sims must be at least 1".into()).into());
    }
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(RcdError::InvalidArgument(format!("--alpha must lie in (0, 1), got {}", args.alpha)).into());
    }
    let seed = resolve_seed(args.seed, &mut manifest);
    let settings = StudySettings {
        n_sims: args.sims,
        seed,
        draws: args.draws,
        kappa: args.kappa,
        p_cutoff: args.alpha,
    };
    let mut staged = Staged::new(&args.out)?;
    match args.study {
        Study::Fpr => {
            let scenarios = fpr_scenarios();
            manifest.parameters = json!({ "study": args.study, "settings": settings, "scenarios": scenarios });
            let rows = run_fpr_study(&scenarios, &settings)?;
            let mut s = String::from("scenario\tanosva_fpr\trcd_fpr\tn_sims\tmc_se\n");
            for r in &rows {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}\t{}",
                    r.scenario,
                    fmt_f64(r.anosva_fpr),
                    fmt_f64(r.rcd_fpr),
                    r.n_sims,
                    fmt_f64(r.mc_se)
                );
            }
            manifest.count("scenarios", rows.len());
            staged.add("fpr_table.tsv", s.as_bytes())?;
        }
        Study::Power => {
            let grid = PowerGrid::default();
            manifest.parameters = json!({ "study": args.study, "settings": settings, "grid": grid });
            let rows = run_power_study(&grid, &settings)?;
            let mut s = String::from("method\tresponse\teffect_log2\tn\tdetect_rate\tn_sims\n");
            for r in &rows {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    r.method,
                    r.response,
                    fmt_f64(r.effect_log2),
                    r.n,
                    fmt_f64(r.detect_rate),
                    r.n_sims
                );
            }
            manifest.count("rows", rows.len());
            staged.add("power_curves.tsv", s.as_bytes())?;
        }
        Study::Confounding => {
            let scenarios = [Scenario::null(2, true), Scenario::null(3, true)];
            manifest.parameters = json!({ "study": args.study, "settings": settings, "scenarios": scenarios });
            let mut s = String::from("scenario\tn_sets\tanosva_spearman\trcd_spearman\n");
            for sc in &scenarios {
                let c = run_confounding_study(sc, &settings)?;
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}",
                    sc.name,
                    c.n_sets,
                    fmt_f64(c.anosva_spearman),
                    fmt_f64(c.rcd_spearman)
                );
            }
            staged.add("confounding.tsv", s.as_bytes())?;
        }
    }
    report(&manifest.finish(staged)?);
    Ok(())
}

fn read_genes(path: Option<&Path>) -> Result<Vec<String>> {
    let genes = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| RcdError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            parse_gene_list(&text)
        }
        None => known_genes(),
    };
    if genes.is_empty() {
        bail!(RcdError::InvalidArgument("gene list is empty".into()));
    }
    Ok(genes)
}

pub fn enrich(args: &EnrichArgs) -> Result<()> {
    let mut manifest = RunManifest::new("enrich", now());
    let seed = resolve_seed(args.seed, &mut manifest);
    let genes = read_genes(args.genes.as_deref())?;
    let cutoffs = args
        .cutoff
        .iter()
        .map(|c| c.parse::<Cutoff>())
        .collect::<Result<Vec<_>, _>>()?;
    let table = CallTable::read(&args.calls)?;
    if table.is_empty() {
        return Err(anyhow!(RcdError::InvalidArgument(format!(
            "call table {} has no rows",
            args.calls.display()
        ))));
    }
    let results = cutoffs
        .iter()
        .map(|c| enrich::enrich(&table, &genes, c, args.perms, seed, args.per_gene))
        .collect::<Result<Vec<_>, _>>()?;
    let mut json = serde_json::to_vec_pretty(&results)?;
    json.push(b'\n');

    match &args.out {
        None => {
            if manifest.seed_source.as_deref() == Some("entropy") {
                eprintln!("seed: {seed}");
            }
            print!("{}", String::from_utf8(json)?)
        }
        Some(dir) => {
            manifest.inputs.push(digest(&args.calls)?);
            if let Some(g) = &args.genes {
                manifest.inputs.push(digest(g)?);
            }
            manifest.parameters = json!({
                "cutoffs": args.cutoff,
                "perms": args.perms,
                "per_gene": args.per_gene,
                "genes": genes,
            });
            manifest.count("call_rows", table.len());
            let mut staged = Staged::new(dir)?;
            staged.add("enrichment.json", &json)?;
            report(&manifest.finish(staged)?);
        }
    }
    Ok(())
}
