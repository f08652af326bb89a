//! Incompatible junction sets.
//!
//! Two junctions of one gene are incompatible when their excised intervals
//! share at least one base (closed intervals). The set for an anchor junction
//! holds every junction overlapping the anchor, the anchor included. Sets are
//! anchor-relative: overlap is not transitive, so a chain `a~b~c` gives
//! `{a,b}`, `{a,b,c}` and `{b,c}`.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::JunctionProbe;
use crate::error::{RcdError, Result};

pub const DEFAULT_MAX_SET_SIZE: usize = 10;

/// A distinct excised interval of a gene. Probes with identical
/// `(gene, j5, j3)` are replicate spots of the same junction; the junction is
/// named after the lexicographically smallest of their ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Junction {
    pub id: String,
    pub gene: String,
    pub j5: i64,
    pub j3: i64,
    pub probe_ids: Vec<String>,
}

impl Junction {
    pub fn overlaps(&self, other: &Junction) -> bool {
        self.j5 <= other.j3 && other.j5 <= self.j3
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncompatibleSet {
    pub set_id: String,
    pub gene: String,
    pub anchor: String,
    /// Sorted by `(j5, j3, id)`; includes the anchor.
    pub members: Vec<Junction>,
}

impl IncompatibleSet {
    pub fn member_ids(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(|m| m.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OversizedSet {
    pub gene: String,
    pub anchor: String,
    pub size: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetCollection {
    pub sets: Vec<IncompatibleSet>,
    pub oversized: Vec<OversizedSet>,
    /// Anchors with no incompatible partner; nothing to rank.
    pub singletons: usize,
}

impl SetCollection {
    /// Histogram of set sizes (size -> count).
    pub fn size_distribution(&self) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        for s in &self.sets {
            *out.entry(s.len()).or_insert(0) += 1;
        }
        out
    }
}

/// Closed-interval intersection test for two probes of the same gene.
pub fn intervals_incompatible(a: &JunctionProbe, b: &JunctionProbe) -> Result<bool> {
    if a.gene != b.gene {
        return Err(RcdError::GeneMismatch(a.gene.clone(), b.gene.clone()));
    }
    Ok(a.j5 <= b.j3 && b.j5 <= a.j3)
}

/// Stable identifier of a member list: first 16 hex digits of its SHA-256.
pub fn set_id<'a>(member_ids: impl IntoIterator<Item = &'a str>) -> String {
    let joined = member_ids.into_iter().collect::<Vec<_>>().join(",");
    let digest = Sha256::digest(joined.as_bytes());
    hex::encode(&digest[..8])
}

/// Groups probes into junctions, sorted by `(gene, j5, j3, id)`.
pub fn collapse_junctions(probes: &[JunctionProbe]) -> Vec<Junction> {
    let mut by_interval: BTreeMap<(&str, i64, i64), Vec<String>> = BTreeMap::new();
    for p in probes {
        by_interval
            .entry((&p.gene, p.j5, p.j3))
            .or_default()
            .push(p.probe_id.clone());
    }
    let mut out: Vec<Junction> = by_interval
        .into_iter()
        .map(|((gene, j5, j3), mut probe_ids)| {
            probe_ids.sort();
            Junction {
                id: probe_ids[0].clone(),
                gene: gene.to_string(),
                j5,
                j3,
                probe_ids,
            }
        })
        .collect();
    out.sort_by(|a, b| (&a.gene, a.j5, a.j3, &a.id).cmp(&(&b.gene, b.j5, b.j3, &b.id)));
    out
}

/// Builds one set per anchor junction, dropping singletons and sets larger
/// than `max_size`, and keeping one copy of identical member lists.
pub fn build_sets(probes: &[JunctionProbe], max_size: usize) -> SetCollection {
    let junctions = collapse_junctions(probes);
    let mut by_gene: BTreeMap<&str, Vec<&Junction>> = BTreeMap::new();
    for j in &junctions {
        by_gene.entry(&j.gene).or_default().push(j);
    }

    let mut out = SetCollection::default();
    for (gene, genes_junctions) in by_gene {
        let mut seen: HashSet<Vec<&str>> = HashSet::new();
        for anchor in &genes_junctions {
            let members: Vec<&Junction> = genes_junctions
                .iter()
                .copied()
                .filter(|m| anchor.overlaps(m))
                .collect();
            if members.len() < 2 {
                out.singletons += 1;
                continue;
            }
            if members.len() > max_size {
                out.oversized.push(OversizedSet {
                    gene: gene.to_string(),
                    anchor: anchor.id.clone(),
                    size: members.len(),
                });
                continue;
            }
            let ids: Vec<&str> = members.iter().map(|m| m.id.as_str()).collect();
            if !seen.insert(ids.clone()) {
                continue;
            }
            out.sets.push(IncompatibleSet {
                set_id: set_id(ids.iter().copied()),
                gene: gene.to_string(),
                anchor: anchor.id.clone(),
                members: members.into_iter().cloned().collect(),
            });
        }
    }
    out
}
