//! Output writing and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const CONFIG_FILE: &str = "resolved_config.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    if path.is_dir() {
        // digest of the sorted (name, digest) listing
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        entries.sort();
        let mut listing = String::new();
        for e in entries.iter().filter(|e| e.is_file()) {
            let name = e.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            listing.push_str(&format!("{name} {}\n", file_digest(e)?));
        }
        return Ok(sha256_hex(listing.as_bytes()));
    }
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: String,
    pub seconds: f64,
    pub outputs: Vec<FileDigest>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub output_dir: String,
    pub threads: usize,
    pub inputs: Vec<FileDigest>,
    pub stages: Vec<StageRecord>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    /// Loads the manifest already in `out` if it belongs to the same config,
    /// so stages run one at a time accumulate into one record.
    pub fn open(out: &Path, config_sha256: &str, threads: usize, inputs: Vec<FileDigest>) -> Self {
        let existing = fs::read_to_string(out.join(MANIFEST_FILE))
            .ok()
            .and_then(|t| serde_json::from_str::<RunManifest>(&t).ok())
            .filter(|m| m.config_sha256 == config_sha256);
        let mut m = existing.unwrap_or_else(|| RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: config_sha256.into(),
            output_dir: out.display().to_string(),
            threads,
            inputs: Vec::new(),
            stages: Vec::new(),
            warnings: Vec::new(),
        });
        m.threads = threads;
        m.output_dir = out.display().to_string();
        m.inputs = inputs;
        m
    }

    pub fn record(&mut self, stage: StageRecord) {
        self.warnings.extend(stage.warnings.iter().map(|w| format!("{}: {w}", stage.name)));
        match self.stages.iter_mut().find(|s| s.name == stage.name) {
            Some(s) => *s = stage,
            None => self.stages.push(stage),
        }
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(out.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}

/// Collects the files a stage writes, relative to the output directory.
pub struct StageOutputs<'a> {
    out: &'a Path,
    written: Vec<FileDigest>,
    pub warnings: Vec<String>,
}

impl<'a> StageOutputs<'a> {
    pub fn new(out: &'a Path) -> Self {
        Self {
            out,
            written: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<PathBuf> {
        let mut text = header.join(",");
        text.push('\n');
        for row in rows {
            let cells: Vec<String> = row.into_iter().map(|c| csv_field(&c)).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        self.write_bytes(name, text.as_bytes())
    }

    pub fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.warnings.push(message);
    }

    pub fn finish(self, name: &str, status: &str, seconds: f64) -> StageRecord {
        StageRecord {
            name: name.into(),
            status: status.into(),
            seconds,
            outputs: self.written,
            warnings: self.warnings,
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Formats an optional number for CSV; missing values become empty cells.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}
