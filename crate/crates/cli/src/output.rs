//! Staged output directory and run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

/// Collects output files in temporaries next to their targets and renames
/// them all at the end, so a failed run leaves nothing half-written.
pub struct Staged {
    dir: PathBuf,
    files: Vec<(PathBuf, NamedTempFile)>,
}

impl Staged {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn add(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        let mut tmp = NamedTempFile::new_in(&self.dir)
            .with_context(|| format!("cannot create temporary file in {}", self.dir.display()))?;
        tmp.write_all(contents)
            .and_then(|_| tmp.flush())
            .with_context(|| format!("cannot write {name}"))?;
        self.files.push((self.dir.join(name), tmp));
        Ok(())
    }

    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for (path, tmp) in self.files {
            tmp.persist(&path)
                .with_context(|| format!("cannot move output into place at {}", path.display()))?;
            written.push(path);
        }
        Ok(written)
    }
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

pub fn digest(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command_line: String,
    pub subcommand: String,
    pub seed: Option<u64>,
    /// `flag` or `entropy`.
    pub seed_source: Option<String>,
    pub parameters: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub version: String,
    pub started_at: String,
    pub finished_at: String,
    pub warnings: Vec<String>,
    pub counts: BTreeMap<String, serde_json::Value>,
    pub outputs: Vec<String>,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new(subcommand: &str, started_at: String) -> Self {
        Self {
            command_line: std::env::args().collect::<Vec<_>>().join(" "),
            subcommand: subcommand.to_string(),
            seed: None,
            seed_source: None,
            parameters: serde_json::Value::Null,
            inputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_at,
            finished_at: String::new(),
            warnings: Vec::new(),
            counts: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn count(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.counts.insert(key.to_string(), value.into());
    }

    /// Adds the manifest to the staged outputs and commits everything.
    pub fn finish(mut self, mut staged: Staged) -> Result<Vec<PathBuf>> {
        self.outputs = staged
            .files
            .iter()
            .filter_map(|(p, _)| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        self.outputs.push("manifest.json".into());
        self.finished_at = now();
        let mut json = serde_json::to_vec_pretty(&self)?;
        json.push(b'\n');
        staged.add("manifest.json", &json)?;
        staged.commit()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn staged_files_appear_only_on_commit() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Staged::new(dir.path()).unwrap();
        s.add("a.tsv", b"x\n").unwrap();
        assert!(!dir.path().join("a.tsv").exists());
        s.commit().unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("a.tsv")).unwrap(), "x\n");
    }

    #[test]
    fn dropped_stage_leaves_no_files() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = Staged::new(dir.path()).unwrap();
            s.add("a.tsv", b"x\n").unwrap();
        }
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
