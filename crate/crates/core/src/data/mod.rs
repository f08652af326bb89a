//! Input tables: junction probes, two-color array design and log intensities.
//!
//! The three tables are parsed independently (see [`tsv`]) and then joined by
//! [`Dataset::validate`], which enforces referential integrity and spot
//! pairing. A validated `Dataset` is immutable.

pub mod tsv;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{RcdError, Result};

pub use tsv::{
    parse_design, parse_intensities, parse_probes, write_dataset, write_design, write_intensities,
    write_probes,
};

/// A splice-junction probe and the excised interval `[j5, j3]` it reports on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JunctionProbe {
    pub probe_id: String,
    pub gene: String,
    pub j5: i64,
    pub j3: i64,
}

impl JunctionProbe {
    pub fn new(probe_id: impl Into<String>, gene: impl Into<String>, j5: i64, j3: i64) -> Result<Self> {
        let probe_id = probe_id.into();
        if j5 >= j3 {
            return Err(RcdError::InvertedInterval { probe_id, j5, j3 });
        }
        Ok(Self {
            probe_id,
            gene: gene.into(),
            j5,
            j3,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    Cy3,
    Cy5,
}

impl Channel {
    pub const BOTH: [Channel; 2] = [Channel::Cy3, Channel::Cy5];

    pub fn other(self) -> Channel {
        match self {
            Channel::Cy3 => Channel::Cy5,
            Channel::Cy5 => Channel::Cy3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Cy3 => "Cy3",
            Channel::Cy5 => "Cy5",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cy3" => Ok(Channel::Cy3),
            "cy5" => Ok(Channel::Cy5),
            _ => Err(format!("unknown channel `{s}` (expected Cy3 or Cy5)")),
        }
    }
}

/// One channel of one two-color array and the sample hybridized to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayChannelAssignment {
    pub array_id: String,
    pub channel: Channel,
    pub tissue: String,
    pub replicate: u32,
}

impl ArrayChannelAssignment {
    /// The dye is the channel itself; kept for balance diagnostics only.
    pub fn dye(&self) -> Channel {
        self.channel
    }
}

/// Parsed design table plus any non-fatal diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignTable {
    pub assignments: Vec<ArrayChannelAssignment>,
    pub warnings: Vec<String>,
}

impl DesignTable {
    /// Checks the two-color reference layout and reports dye imbalance.
    pub fn from_assignments(assignments: Vec<ArrayChannelAssignment>) -> Result<Self> {
        let mut per_array: BTreeMap<&str, Vec<&ArrayChannelAssignment>> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for a in &assignments {
            if !seen.insert((a.array_id.as_str(), a.channel)) {
                return Err(RcdError::Design(format!(
                    "array {} lists channel {} twice",
                    a.array_id, a.channel
                )));
            }
            per_array.entry(&a.array_id).or_default().push(a);
        }
        for (array, rows) in &per_array {
            if rows.len() != 2 {
                return Err(RcdError::Design(format!(
                    "array {array} has {} channel(s), expected 2",
                    rows.len()
                )));
            }
            if rows[0].tissue == rows[1].tissue {
                return Err(RcdError::Design(format!(
                    "array {array} carries tissue {} on both channels",
                    rows[0].tissue
                )));
            }
        }

        let mut by_dye: BTreeMap<&str, [usize; 2]> = BTreeMap::new();
        for a in &assignments {
            let counts = by_dye.entry(&a.tissue).or_default();
            counts[a.dye() as usize] += 1;
        }
        let warnings = by_dye
            .iter()
            .filter(|(_, c)| c[0] != c[1])
            .map(|(tissue, c)| {
                format!("dye imbalance for tissue {tissue}: {} on Cy3, {} on Cy5", c[0], c[1])
            })
            .collect();

        Ok(Self {
            assignments,
            warnings,
        })
    }
}

/// A single log2 channel intensity of one spot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityRecord {
    pub probe_id: String,
    pub array_id: String,
    pub channel: Channel,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub genes: usize,
    pub junctions: usize,
    pub probes: usize,
    pub arrays: usize,
    pub spots: usize,
    pub records: usize,
}

/// Validated, indexed input data.
#[derive(Debug, Clone)]
pub struct Dataset {
    probes: Vec<JunctionProbe>,
    design: Vec<ArrayChannelAssignment>,
    intensities: Vec<IntensityRecord>,
    probe_index: HashMap<String, usize>,
    design_index: HashMap<(String, Channel), usize>,
    by_probe: HashMap<String, Vec<usize>>,
}

impl Dataset {
    /// Joins the three tables, checking references and channel pairing.
    pub fn validate(
        probes: Vec<JunctionProbe>,
        design: Vec<ArrayChannelAssignment>,
        intensities: Vec<IntensityRecord>,
    ) -> Result<Self> {
        let mut probe_index = HashMap::with_capacity(probes.len());
        for (i, p) in probes.iter().enumerate() {
            if p.j5 >= p.j3 {
                return Err(RcdError::InvertedInterval {
                    probe_id: p.probe_id.clone(),
                    j5: p.j5,
                    j3: p.j3,
                });
            }
            if probe_index.insert(p.probe_id.clone(), i).is_some() {
                return Err(RcdError::DuplicateProbe(p.probe_id.clone()));
            }
        }
        // Re-checks the layout when the caller built the assignments by hand.
        let design = DesignTable::from_assignments(design)?.assignments;
        let design_index: HashMap<(String, Channel), usize> = design
            .iter()
            .enumerate()
            .map(|(i, a)| ((a.array_id.clone(), a.channel), i))
            .collect();

        let mut unknown_probes = BTreeSet::new();
        let mut unknown_arrays = BTreeSet::new();
        let mut spots: BTreeMap<(&str, &str), [bool; 2]> = BTreeMap::new();
        let mut by_probe: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, r) in intensities.iter().enumerate() {
            if !r.value.is_finite() {
                return Err(RcdError::InvalidArgument(format!(
                    "non-finite intensity for probe {} on {} {}",
                    r.probe_id, r.array_id, r.channel
                )));
            }
            if !probe_index.contains_key(&r.probe_id) {
                unknown_probes.insert(r.probe_id.clone());
            }
            if !design_index.contains_key(&(r.array_id.clone(), r.channel)) {
                unknown_arrays.insert(format!("{}/{}", r.array_id, r.channel));
            }
            let slot = spots.entry((&r.probe_id, &r.array_id)).or_default();
            if slot[r.channel as usize] {
                return Err(RcdError::InvalidArgument(format!(
                    "duplicate record for probe {} on {} {}",
                    r.probe_id, r.array_id, r.channel
                )));
            }
            slot[r.channel as usize] = true;
            by_probe.entry(r.probe_id.clone()).or_default().push(i);
        }
        if !unknown_probes.is_empty() || !unknown_arrays.is_empty() {
            let mut parts = Vec::new();
            if !unknown_probes.is_empty() {
                parts.push(format!(
                    "unknown probe_id(s): {}",
                    unknown_probes.into_iter().collect::<Vec<_>>().join(", ")
                ));
            }
            if !unknown_arrays.is_empty() {
                parts.push(format!(
                    "unknown array/channel(s): {}",
                    unknown_arrays.into_iter().collect::<Vec<_>>().join(", ")
                ));
            }
            return Err(RcdError::Dangling(parts.join("; ")));
        }
        let unpaired: Vec<String> = spots
            .iter()
            .filter(|(_, seen)| !(seen[0] && seen[1]))
            .map(|((probe, array), _)| format!("{probe}@{array}"))
            .collect();
        if !unpaired.is_empty() {
            return Err(RcdError::UnpairedSpot(unpaired.join(", ")));
        }

        Ok(Self {
            probes,
            design,
            intensities,
            probe_index,
            design_index,
            by_probe,
        })
    }

    pub fn probes(&self) -> &[JunctionProbe] {
        &self.probes
    }

    pub fn design(&self) -> &[ArrayChannelAssignment] {
        &self.design
    }

    pub fn intensities(&self) -> &[IntensityRecord] {
        &self.intensities
    }

    pub fn probe(&self, probe_id: &str) -> Option<&JunctionProbe> {
        self.probe_index.get(probe_id).map(|&i| &self.probes[i])
    }

    pub fn assignment(&self, array_id: &str, channel: Channel) -> Option<&ArrayChannelAssignment> {
        self.design_index
            .get(&(array_id.to_string(), channel))
            .map(|&i| &self.design[i])
    }

    /// All records measured for one probe, in input order.
    pub fn records_for_probe<'a>(&'a self, probe_id: &str) -> impl Iterator<Item = &'a IntensityRecord> + 'a {
        self.by_probe
            .get(probe_id)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
            .iter()
            .map(move |&i| &self.intensities[i])
    }

    /// Sorted distinct tissue labels present in the design.
    pub fn tissues(&self) -> Vec<String> {
        self.design
            .iter()
            .map(|a| a.tissue.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn summary(&self) -> DatasetSummary {
        let genes = self.probes.iter().map(|p| &p.gene).collect::<BTreeSet<_>>().len();
        let junctions = self
            .probes
            .iter()
            .map(|p| (&p.gene, p.j5, p.j3))
            .collect::<BTreeSet<_>>()
            .len();
        let arrays = self.design.iter().map(|a| &a.array_id).collect::<BTreeSet<_>>().len();
        let spots = self
            .intensities
            .iter()
            .map(|r| (&r.probe_id, &r.array_id))
            .collect::<BTreeSet<_>>()
            .len();
        DatasetSummary {
            genes,
            junctions,
            probes: self.probes.len(),
            arrays,
            spots,
            records: self.intensities.len(),
        }
    }

    /// Applies `y -> f(y)` to every intensity; used by equivariance checks.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let intensities = self
            .intensities
            .iter()
            .map(|r| IntensityRecord {
                value: f(r.value),
                ..r.clone()
            })
            .collect();
        Self::validate(self.probes.clone(), self.design.clone(), intensities)
    }
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.probes == other.probes && self.design == other.design && self.intensities == other.intensities
    }
}
