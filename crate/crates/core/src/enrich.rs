//! Enrichment of significant calls in a gene set, with a random-gene-set
//! permutation control.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{RcdError, Result};
use crate::rng;

pub const DEFAULT_PERMUTATIONS: usize = 10_000;
pub const MIN_PERMUTATIONS: usize = 100;
const PERM_CHUNK: usize = 1_000;

/// Genes reported as differentially spliced in glioblastoma before.
pub const KNOWN_GENES: &str = include_str!("../data/known_genes.txt");

/// Parses a gene list: one symbol per line, `#` comments and blanks skipped.
pub fn parse_gene_list(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .filter(|l| seen.insert(l.to_string()))
        .map(str::to_string)
        .collect()
}

pub fn known_genes() -> Vec<String> {
    parse_gene_list(KNOWN_GENES)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    #[serde(rename = ">")]
    Greater,
    #[serde(rename = ">=")]
    GreaterEq,
    #[serde(rename = "<")]
    Less,
    #[serde(rename = "<=")]
    LessEq,
}

impl Comparison {
    fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparison::Greater => value > threshold,
            Comparison::GreaterEq => value >= threshold,
            Comparison::Less => value < threshold,
            Comparison::LessEq => value <= threshold,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Comparison::Greater => ">",
            Comparison::GreaterEq => ">=",
            Comparison::Less => "<",
            Comparison::LessEq => "<=",
        }
    }
}

/// Significance rule on one call-table column, e.g. `max_ud>0.99` or
/// `lfdr<1e-3`. `max_ud` is derived from the `U` and `D` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub column: String,
    pub comparison: Comparison,
    pub threshold: f64,
}

impl FromStr for Cutoff {
    type Err = RcdError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || RcdError::InvalidArgument(format!("cannot parse cutoff `{s}` (expected e.g. max_ud>0.9 or lfdr<1e-3)"));
        let pos = s.find(['<', '>']).ok_or_else(bad)?;
        let column = s[..pos].trim();
        let rest = &s[pos..];
        let (comparison, value) = if let Some(v) = rest.strip_prefix(">=") {
            (Comparison::GreaterEq, v)
        } else if let Some(v) = rest.strip_prefix("<=") {
            (Comparison::LessEq, v)
        } else if let Some(v) = rest.strip_prefix('>') {
            (Comparison::Greater, v)
        } else {
            (Comparison::Less, &rest[1..])
        };
        let threshold: f64 = value.trim().parse().map_err(|_| bad())?;
        if column.is_empty() || !threshold.is_finite() {
            return Err(bad());
        }
        Ok(Cutoff {
            column: column.to_string(),
            comparison,
            threshold,
        })
    }
}

impl fmt::Display for Cutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.column, self.comparison.symbol(), self.threshold)
    }
}

/// One row of a call table reduced to its gene and significance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneCall {
    pub gene: String,
    pub significant: bool,
}

/// A tab-separated call table (`rcd_calls.tsv`, `anosva_calls.tsv` or any
/// table with a `gene` column).
#[derive(Debug, Clone, PartialEq)]
pub struct CallTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CallTable {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let csv_err = |source| RcdError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(csv_err)?;
        let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            rows.push(rec.map_err(csv_err)?.iter().map(str::to_string).collect());
        }
        Self::new(header, rows)
    }

    pub fn new(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        if !header.iter().any(|h| h == "gene") {
            return Err(RcdError::InvalidArgument("call table has no `gene` column".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != header.len()) {
            return Err(RcdError::InvalidArgument(format!(
                "call table row has {} fields, header has {}",
                r.len(),
                header.len()
            )));
        }
        Ok(Self { header, rows })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .or_else(|| self.header.iter().position(|h| h.eq_ignore_ascii_case(name)))
            .ok_or_else(|| RcdError::InvalidArgument(format!("call table has no `{name}` column")))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Applies the cutoff to every row. Unparseable values (`NaN`, `NA`)
    /// count as not significant.
    pub fn apply(&self, cutoff: &Cutoff) -> Result<Vec<GeneCall>> {
        let gene = self.column("gene")?;
        let value: Box<dyn Fn(&[String]) -> f64> = if cutoff.column.eq_ignore_ascii_case("max_ud") {
            let (u, d) = (self.column("U")?, self.column("D")?);
            Box::new(move |r: &[String]| parse_or_nan(&r[u]).max(parse_or_nan(&r[d])))
        } else {
            let c = self.column(&cutoff.column)?;
            Box::new(move |r: &[String]| parse_or_nan(&r[c]))
        };
        Ok(self
            .rows
            .iter()
            .map(|r| {
                let v = value(r);
                GeneCall {
                    gene: r[gene].clone(),
                    significant: !v.is_nan() && cutoff.comparison.holds(v, cutoff.threshold),
                }
            })
            .collect())
    }
}

fn parse_or_nan(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

/// Collapses calls to one indicator per gene (significant if any row is).
pub fn collapse_per_gene(calls: &[GeneCall]) -> Vec<GeneCall> {
    let mut by_gene: BTreeMap<&str, bool> = BTreeMap::new();
    for c in calls {
        *by_gene.entry(&c.gene).or_insert(false) |= c.significant;
    }
    by_gene
        .into_iter()
        .map(|(gene, significant)| GeneCall {
            gene: gene.to_string(),
            significant,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichmentResult {
    pub gene_set: Vec<String>,
    pub cutoff: String,
    pub n_sig_in: usize,
    pub n_total_in: usize,
    pub n_sig_out: usize,
    pub n_total_out: usize,
    /// `None` when nothing is significant anywhere.
    pub ratio: Option<f64>,
    pub ratio_infinite: bool,
    pub perm_p: Option<f64>,
    pub n_perm: usize,
    pub per_gene: bool,
}

/// Per-gene `(significant, total)` counts, the only thing permutations need.
#[derive(Debug, Clone)]
struct GeneCounts {
    genes: Vec<String>,
    sig: Vec<usize>,
    total: Vec<usize>,
    sig_all: usize,
    total_all: usize,
}

impl GeneCounts {
    fn new(calls: &[GeneCall]) -> Self {
        let mut map: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for c in calls {
            let e = map.entry(&c.gene).or_default();
            e.0 += c.significant as usize;
            e.1 += 1;
        }
        let genes = map.keys().map(|g| g.to_string()).collect();
        let (sig, total): (Vec<usize>, Vec<usize>) = map.into_values().unzip();
        Self {
            sig_all: sig.iter().sum(),
            total_all: total.iter().sum(),
            genes,
            sig,
            total,
        }
    }

    fn ratio(&self, members: impl Iterator<Item = usize>) -> (usize, usize, f64) {
        let (mut s, mut t) = (0, 0);
        for i in members {
            s += self.sig[i];
            t += self.total[i];
        }
        (s, t, ratio_from_counts(s, t, self.sig_all - s, self.total_all - t))
    }
}

/// `(sig_in / tot_in) / (sig_out / tot_out)`; infinite when nothing outside
/// is significant, NaN when nothing is significant at all.
pub fn ratio_from_counts(sig_in: usize, tot_in: usize, sig_out: usize, tot_out: usize) -> f64 {
    let p_in = sig_in as f64 / tot_in as f64;
    let p_out = sig_out as f64 / tot_out as f64;
    if sig_out == 0 {
        if sig_in == 0 {
            f64::NAN
        } else {
            f64::INFINITY
        }
    } else {
        p_in / p_out
    }
}

fn set_members(counts: &GeneCounts, genes: &[String]) -> Result<Vec<usize>> {
    if genes.is_empty() {
        return Err(RcdError::InvalidArgument("gene set is empty".into()));
    }
    let index: HashMap<&str, usize> = counts.genes.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();
    let mut members: Vec<usize> = genes.iter().filter_map(|g| index.get(g.as_str()).copied()).collect();
    members.sort_unstable();
    members.dedup();
    if members.is_empty() {
        return Err(RcdError::InvalidArgument(format!(
            "none of the {} genes in the set occur in the call table",
            genes.len()
        )));
    }
    if members.len() == counts.genes.len() {
        return Err(RcdError::InvalidArgument(
            "gene set covers every gene in the call table; nothing to compare against".into(),
        ));
    }
    Ok(members)
}

/// Counts significant rows inside and outside the gene set.
pub fn enrichment_ratio(calls: &[GeneCall], genes: &[String], cutoff: &str) -> Result<EnrichmentResult> {
    let counts = GeneCounts::new(calls);
    let members = set_members(&counts, genes)?;
    let (sig_in, tot_in, ratio) = counts.ratio(members.iter().copied());
    Ok(EnrichmentResult {
        gene_set: genes.to_vec(),
        cutoff: cutoff.to_string(),
        n_sig_in: sig_in,
        n_total_in: tot_in,
        n_sig_out: counts.sig_all - sig_in,
        n_total_out: counts.total_all - tot_in,
        ratio: (!ratio.is_nan()).then_some(ratio),
        ratio_infinite: ratio.is_infinite(),
        perm_p: None,
        n_perm: 0,
        per_gene: false,
    })
}

/// Fraction of random same-size gene sets (drawn without replacement from the
/// genes on the call table) whose ratio reaches the observed one, with the
/// `+1` correction. Permutations run in chunks with their own streams, so the
/// result does not depend on thread count.
pub fn permutation_pvalue(calls: &[GeneCall], genes: &[String], n_perm: usize, seed: u64) -> Result<f64> {
    if n_perm < MIN_PERMUTATIONS {
        return Err(RcdError::InvalidArgument(format!(
            "need at least {MIN_PERMUTATIONS} permutations, got {n_perm}"
        )));
    }
    let counts = GeneCounts::new(calls);
    let members = set_members(&counts, genes)?;
    let (_, _, observed) = counts.ratio(members.iter().copied());
    if observed.is_nan() {
        return Ok(1.0);
    }
    let k = members.len();
    let n_genes = counts.genes.len();
    let n_chunks = n_perm.div_ceil(PERM_CHUNK);
    let exceed: usize = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(seed, &["perm", &c.to_string()]);
            let size = PERM_CHUNK.min(n_perm - c * PERM_CHUNK);
            (0..size)
                .filter(|_| {
                    let (_, _, r) = counts.ratio(sample(&mut rng, n_genes, k).into_iter());
                    at_least(r, observed)
                })
                .count()
        })
        .sum();
    Ok((1 + exceed) as f64 / (n_perm + 1) as f64)
}

// Ratios built from different integer counts can agree mathematically but not
// in floating point.
fn at_least(r: f64, observed: f64) -> bool {
    if observed.is_infinite() {
        return r.is_infinite();
    }
    r >= observed * (1.0 - 1e-12)
}

/// Ratio plus permutation control for one cutoff.
pub fn enrich(
    table: &CallTable,
    genes: &[String],
    cutoff: &Cutoff,
    n_perm: usize,
    seed: u64,
    per_gene: bool,
) -> Result<EnrichmentResult> {
    let mut calls = table.apply(cutoff)?;
    if per_gene {
        calls = collapse_per_gene(&calls);
    }
    let mut result = enrichment_ratio(&calls, genes, &cutoff.to_string())?;
    result.perm_p = Some(permutation_pvalue(&calls, genes, n_perm, seed)?);
    result.n_perm = n_perm;
    result.per_gene = per_gene;
    Ok(result)
}
