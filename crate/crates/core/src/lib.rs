//! Latent rank change detection for splice-junction microarrays.
//!
//! Junction probes are grouped into sets of mutually incompatible junctions.
//! For each set and pair of tissues a linear mixed model with a spot random
//! effect gives the approximate posterior of the junction means; Monte-Carlo
//! draws from it estimate the probability that a junction's rank within its
//! set rises (`U`) or falls (`D`) between tissues. A two-way ANOVA interaction
//! test (ANOSVA) is included as the linear-response baseline, together with
//! q-values, local FDR, a simulation harness and a gene-set enrichment test.
//!
//! ```no_run
//! use rcd_core::prelude::*;
//!
//! let probes = parse_probes("probes.tsv")?;
//! let design = parse_design("design.tsv")?;
//! let values = parse_intensities("intensities.tsv", false, 1.0)?;
//! let data = Dataset::validate(probes, design.assignments, values)?;
//! let analysis = analyze(&data, &AnalysisConfig { seed: 7, ..Default::default() })?;
//! for call in &analysis.rcd_calls {
//!     println!("{} {} U={} D={}", call.gene, call.junction, call.u, call.d);
//! }
//! # Ok::<(), rcd_core::RcdError>(())
//! ```

pub mod anosva;
pub mod data;
pub mod enrich;
pub mod error;
pub mod fdr;
pub mod junctions;
pub mod mixed_model;
pub mod pipeline;
pub mod rank_change;
pub mod rng;
pub mod simulate;
pub mod stats;

pub use error::{RcdError, Result};

pub mod prelude {
    pub use crate::anosva::{fit_anosva, AnosvaResult};
    pub use crate::data::tsv::{parse_design, parse_intensities, parse_probes};
    pub use crate::data::{ArrayChannelAssignment, Channel, Dataset, DesignTable, IntensityRecord, JunctionProbe};
    pub use crate::error::{RcdError, Result};
    pub use crate::fdr::{lfdr, qvalues, FdrMethod};
    pub use crate::junctions::{build_sets, IncompatibleSet, SetCollection};
    pub use crate::mixed_model::{fit_set, FitResult};
    pub use crate::pipeline::{analyze, Analysis, AnalysisConfig};
    pub use crate::rank_change::{latent_ranks, rank_change_probability, Call, RankCall};
}
