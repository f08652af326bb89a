//! Tab-separated readers and writers for the three input tables.
//!
//! All files are UTF-8 with a mandatory header row; lines starting with `#`
//! are skipped.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord};

use super::{
    ArrayChannelAssignment, Channel, Dataset, DesignTable, IntensityRecord, JunctionProbe,
};
use crate::error::{RcdError, Result};

pub const PROBES_HEADER: [&str; 4] = ["probe_id", "gene", "j5", "j3"];
pub const DESIGN_HEADER: [&str; 4] = ["array_id", "channel", "tissue", "replicate"];
pub const INTENSITIES_HEADER: [&str; 4] = ["probe_id", "array_id", "channel", "value"];

fn read_table(path: &Path, header: &[&str]) -> Result<Vec<(u64, StringRecord)>> {
    let file = File::open(path).map_err(|source| RcdError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = ReaderBuilder::new()
        .delimiter(b'\t')
        .comment(Some(b'#'))
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let csv_err = |source| RcdError::Csv {
        path: path.to_path_buf(),
        source,
    };

    let found = reader.headers().map_err(csv_err)?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(RcdError::Header {
            path: path.to_path_buf(),
            expected: header.join("\t"),
            found: found.iter().collect::<Vec<_>>().join("\t"),
        });
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(RcdError::row(
                path,
                line,
                format!("malformed row: expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        rows.push((line, record));
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, record: &StringRecord, idx: usize, name: &str) -> Result<T> {
    let raw = &record[idx];
    raw.parse()
        .map_err(|_| RcdError::row(path, line, format!("malformed row: bad {name} `{raw}`")))
}

pub fn parse_probes(path: impl AsRef<Path>) -> Result<Vec<JunctionProbe>> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut probes = Vec::new();
    for (line, rec) in read_table(path, &PROBES_HEADER)? {
        let probe_id = rec[0].to_string();
        if probe_id.is_empty() || rec[1].is_empty() {
            return Err(RcdError::row(path, line, "malformed row: empty probe_id or gene"));
        }
        let j5: i64 = field(path, line, &rec, 2, "j5")?;
        let j3: i64 = field(path, line, &rec, 3, "j3")?;
        if j5 >= j3 {
            return Err(RcdError::row(
                path,
                line,
                format!("inverted interval [{j5}, {j3}] for probe {probe_id}"),
            ));
        }
        if !seen.insert(probe_id.clone()) {
            return Err(RcdError::DuplicateProbe(probe_id));
        }
        probes.push(JunctionProbe {
            probe_id,
            gene: rec[1].to_string(),
            j5,
            j3,
        });
    }
    Ok(probes)
}

pub fn parse_design(path: impl AsRef<Path>) -> Result<DesignTable> {
    let path = path.as_ref();
    let mut rows = Vec::new();
    for (line, rec) in read_table(path, &DESIGN_HEADER)? {
        let channel: Channel = rec[1]
            .parse()
            .map_err(|e: String| RcdError::row(path, line, format!("malformed row: {e}")))?;
        if rec[0].is_empty() || rec[2].is_empty() {
            return Err(RcdError::row(path, line, "malformed row: empty array_id or tissue"));
        }
        rows.push(ArrayChannelAssignment {
            array_id: rec[0].to_string(),
            channel,
            tissue: rec[2].to_string(),
            replicate: field(path, line, &rec, 3, "replicate")?,
        });
    }
    DesignTable::from_assignments(rows)
}

/// Reads intensities; raw values become `log2(max(value, floor))` unless
/// `already_log` is set.
pub fn parse_intensities(path: impl AsRef<Path>, already_log: bool, floor: f64) -> Result<Vec<IntensityRecord>> {
    let path = path.as_ref();
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(RcdError::InvalidArgument(format!("floor must be positive, got {floor}")));
    }
    let mut out = Vec::new();
    for (line, rec) in read_table(path, &INTENSITIES_HEADER)? {
        let channel: Channel = rec[2]
            .parse()
            .map_err(|e: String| RcdError::row(path, line, format!("malformed row: {e}")))?;
        let raw: f64 = field(path, line, &rec, 3, "value")?;
        if raw.is_nan() || (already_log && !raw.is_finite()) {
            return Err(RcdError::row(path, line, format!("non-finite value `{}`", &rec[3])));
        }
        let value = if already_log { raw } else { log_transform(raw, floor) };
        if !value.is_finite() {
            return Err(RcdError::row(path, line, format!("non-finite value `{}`", &rec[3])));
        }
        out.push(IntensityRecord {
            probe_id: rec[0].to_string(),
            array_id: rec[1].to_string(),
            channel,
            value,
        });
    }
    Ok(out)
}

pub fn log_transform(raw: f64, floor: f64) -> f64 {
    raw.max(floor).log2()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| RcdError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RcdError + '_ {
    move |source| RcdError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_probes(path: impl AsRef<Path>, probes: &[JunctionProbe]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut body = PROBES_HEADER.join("\t");
    body.push('\n');
    for p in probes {
        body.push_str(&format!("{}\t{}\t{}\t{}\n", p.probe_id, p.gene, p.j5, p.j3));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn write_design(path: impl AsRef<Path>, design: &[ArrayChannelAssignment]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut body = DESIGN_HEADER.join("\t");
    body.push('\n');
    for a in design {
        body.push_str(&format!("{}\t{}\t{}\t{}\n", a.array_id, a.channel, a.tissue, a.replicate));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Writes log-scale values with shortest round-trip formatting.
pub fn write_intensities(path: impl AsRef<Path>, records: &[IntensityRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut body = INTENSITIES_HEADER.join("\t");
    body.push('\n');
    for r in records {
        body.push_str(&format!("{}\t{}\t{}\t{:?}\n", r.probe_id, r.array_id, r.channel, r.value));
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Writes `probes.tsv`, `design.tsv` and `intensities.tsv` into `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    write_probes(dir.join("probes.tsv"), dataset.probes())?;
    write_design(dir.join("design.tsv"), dataset.design())?;
    write_intensities(dir.join("intensities.tsv"), dataset.intensities())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn probe_row_maps_fields() {
        let f = tmp("# comment\nprobe_id\tgene\tj5\tj3\np1\tVIM\t100\t200\n");
        let probes = parse_probes(f.path()).unwrap();
        assert_eq!(probes, vec![JunctionProbe::new("p1", "VIM", 100, 200).unwrap()]);
    }

    #[test]
    fn inverted_interval_reports_line() {
        let f = tmp("probe_id\tgene\tj5\tj3\np1\tVIM\t200\t100\n");
        let err = parse_probes(f.path()).unwrap_err().to_string();
        assert!(err.contains("inverted interval"), "{err}");
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn duplicate_probe_id() {
        let f = tmp("probe_id\tgene\tj5\tj3\np1\tVIM\t1\t2\np1\tVIM\t3\t4\n");
        assert_eq!(parse_probes(f.path()).unwrap_err().to_string(), "duplicate probe_id p1");
    }

    #[test]
    fn malformed_rows() {
        let f = tmp("probe_id\tgene\tj5\tj3\np1\tVIM\t1\n");
        assert!(matches!(parse_probes(f.path()), Err(RcdError::Row { line: 2, .. })));
        let f = tmp("probe_id\tgene\tj5\tj3\np1\tVIM\tabc\t3\n");
        assert!(parse_probes(f.path()).unwrap_err().to_string().contains("bad j5"));
        let f = tmp("probe\tgene\tj5\tj3\n");
        assert!(matches!(parse_probes(f.path()), Err(RcdError::Header { .. })));
    }

    #[test]
    fn raw_values_are_floored_then_logged() {
        let f = tmp("probe_id\tarray_id\tchannel\tvalue\np1\ta1\tCy3\t1024\np1\ta1\tCy5\t0\n");
        let recs = parse_intensities(f.path(), false, 1.0).unwrap();
        assert_eq!(recs[0].value, 10.0);
        assert_eq!(recs[1].value, 0.0);
    }

    #[test]
    fn log_values_pass_through() {
        let f = tmp("probe_id\tarray_id\tchannel\tvalue\np1\ta1\tcy5\t7.25\n");
        let recs = parse_intensities(f.path(), true, 1.0).unwrap();
        assert_eq!(recs[0].value, 7.25);
        assert_eq!(recs[0].channel, Channel::Cy5);
    }

    #[test]
    fn bad_values_rejected() {
        let f = tmp("probe_id\tarray_id\tchannel\tvalue\np1\ta1\tCy3\thigh\n");
        assert!(parse_intensities(f.path(), true, 1.0).is_err());
        let f = tmp("probe_id\tarray_id\tchannel\tvalue\np1\ta1\tCy3\tNaN\n");
        assert!(parse_intensities(f.path(), false, 1.0).is_err());
        let f = tmp("probe_id\tarray_id\tchannel\tvalue\np1\ta1\tCy3\tinf\n");
        assert!(parse_intensities(f.path(), true, 1.0).is_err());
        let f = tmp("probe_id\tarray_id\tchannel\tvalue\np1\ta1\tCy7\t1\n");
        assert!(parse_intensities(f.path(), true, 1.0).is_err());
    }

    #[test]
    fn design_errors_propagate() {
        let f = tmp("array_id\tchannel\ttissue\treplicate\na1\tCy3\tN\t1\na1\tCy5\tN\t1\n");
        assert!(parse_design(f.path()).unwrap_err().to_string().contains("reference design violated"));
    }
}
