//! `rcd`: rank change detection for splice-junction microarrays.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rcd_core::fdr::{FdrMethod, DEFAULT_LAMBDA, DEFAULT_LFDR_BINS};
use rcd_core::junctions::DEFAULT_MAX_SET_SIZE;
use rcd_core::rank_change::{DEFAULT_DRAWS, DEFAULT_KAPPA};
use rcd_core::RcdError;

#[derive(Parser, Debug)]
#[command(name = "rcd", version, about = "Rank change detection for splice-junction microarrays")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "RCD_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Group junction probes into incompatible sets.
    BuildSets(BuildSetsArgs),
    /// Fit every set and tissue pair; write RCD and ANOSVA calls.
    Analyze(AnalyzeArgs),
    /// Run the simulation studies.
    Simulate(SimulateArgs),
    /// Enrichment of significant calls in a gene set.
    Enrich(EnrichArgs),
}

#[derive(Args, Debug)]
pub struct BuildSetsArgs {
    #[arg(long)]
    pub probes: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_SET_SIZE)]
    pub max_set_size: usize,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub probes: PathBuf,
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long)]
    pub intensities: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Raw intensities are floored here before the log2 transform.
    #[arg(long, default_value_t = 1.0)]
    pub floor: f64,
    /// Intensities are already on the log2 scale.
    #[arg(long)]
    pub log_input: bool,
    #[arg(long, default_value_t = DEFAULT_KAPPA)]
    pub kappa: f64,
    /// Monte-Carlo draws per set.
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    pub draws: usize,
    /// Master seed; drawn from entropy and recorded when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_MAX_SET_SIZE)]
    pub max_set_size: usize,
    /// Tissue pair `t1,t2`; repeat for several. Default: all pairs.
    #[arg(long, value_name = "T1,T2")]
    pub tissues: Vec<String>,
    /// Largest tolerated fraction of failed set fits.
    #[arg(long, default_value_t = 0.05)]
    pub max_failures: f64,
    #[arg(long, value_enum, default_value_t = FdrArg::Storey)]
    pub fdr_method: FdrArg,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = DEFAULT_LFDR_BINS)]
    pub lfdr_bins: usize,
    /// Also write per-fit variance components to `fits.tsv`.
    #[arg(long)]
    pub diagnostics: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FdrArg {
    Storey,
    Bh,
}

impl From<FdrArg> for FdrMethod {
    fn from(a: FdrArg) -> Self {
        match a {
            FdrArg::Storey => FdrMethod::Storey,
            FdrArg::Bh => FdrMethod::Bh,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    Fpr,
    Power,
    Confounding,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub study: Study,
    /// Simulations per scenario.
    #[arg(long, default_value_t = 1000)]
    pub sims: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    pub draws: usize,
    #[arg(long, default_value_t = DEFAULT_KAPPA)]
    pub kappa: f64,
    /// ANOSVA p-value cutoff.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Args, Debug)]
pub struct EnrichArgs {
    /// `rcd_calls.tsv`, `anosva_calls.tsv` or any TSV with a `gene` column.
    #[arg(long)]
    pub calls: PathBuf,
    /// One gene per line. Default: the bundled list of known genes.
    #[arg(long)]
    pub genes: Option<PathBuf>,
    /// Significance rule such as `max_ud>0.9` or `lfdr<1e-3`; repeatable.
    #[arg(long, required = true)]
    pub cutoff: Vec<String>,
    #[arg(long, default_value_t = rcd_core::enrich::DEFAULT_PERMUTATIONS)]
    pub perms: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Count genes instead of junction rows.
    #[arg(long)]
    pub per_gene: bool,
    /// Directory for `enrichment.json` and the manifest; stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit status 3: the model failed on too many sets.
#[derive(Debug)]
pub struct FailureThreshold(pub String);

impl std::fmt::Display for FailureThreshold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for FailureThreshold {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<FailureThreshold>().is_some() {
        return 3;
    }
    match err.chain().find_map(|e| e.downcast_ref::<RcdError>()) {
        Some(e) if e.is_validation() => 2,
        Some(_) => 3,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = commands::thread_pool(cli.threads).and_then(|pool| {
        pool.install(|| match cli.command {
            Command::BuildSets(a) => commands::build_sets(&a),
            Command::Analyze(a) => commands::analyze(&a),
            Command::Simulate(a) => commands::simulate(&a),
            Command::Enrich(a) => commands::enrich(&a),
        })
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
