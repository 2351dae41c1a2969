//! CSV artifacts and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::config::ExperimentConfig;

/// 17 significant digits, scientific notation.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_owned()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_owned()
    } else {
        format!("{x:.16e}")
    }
}

/// In-memory CSV: header row plus comma-separated rows, `\n` line endings.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(
            row.len(),
            self.header.len(),
            "row width must match the header"
        );
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out.into_bytes()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config: ExperimentConfig,
    pub artifacts: Vec<ArtifactEntry>,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?)
    }

    /// Checks that every listed artifact exists in `dir` with the recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            let bytes = fs::read(dir.join(&a.file))?;
            if sha256_hex(&bytes) != a.sha256 {
                return Err(Error::Validation(format!("hash mismatch for {}", a.file)));
            }
        }
        Ok(())
    }
}

/// Writes each artifact once, in order, and returns manifest entries.
pub fn write_artifacts(dir: &Path, artifacts: &[(String, Vec<u8>)]) -> Result<Vec<ArtifactEntry>> {
    fs::create_dir_all(dir)?;
    artifacts
        .iter()
        .map(|(name, bytes)| {
            let path: PathBuf = dir.join(name);
            fs::write(&path, bytes)?;
            Ok(ArtifactEntry {
                file: name.clone(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            })
        })
        .collect()
}
