//! JSON documents: rank reports, fit summaries and run manifests.

use std::path::{Path, PathBuf};

use nmfrank_core::data::RemovedRow;
use nmfrank_core::RankReport;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Version of the JSON report layout.
pub const SCHEMA: u32 = 1;

#[derive(Serialize)]
pub struct ReportDocument<'a> {
    pub schema: u32,
    pub version: &'static str,
    #[serde(flatten)]
    pub report: &'a RankReport,
    pub removed_zero_rows: &'a [RemovedRow],
}

impl<'a> ReportDocument<'a> {
    pub fn new(report: &'a RankReport, removed_zero_rows: &'a [RemovedRow]) -> Self {
        ReportDocument {
            schema: SCHEMA,
            version: env!("CARGO_PKG_VERSION"),
            report,
            removed_zero_rows,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self, CliError> {
        Ok(FileDigest {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub k: usize,
    pub seconds: f64,
}

/// Provenance written next to every command's outputs. Timestamps and step
/// timings live here so the outputs themselves stay reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    pub config: serde_json::Value,
    pub input: Option<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started: String,
    pub finished: String,
    #[serde(default)]
    pub step_timings: Vec<StepTiming>,
}

impl RunManifest {
    pub fn start(command: &str, seed: u64, threads: usize, config: serde_json::Value) -> Self {
        let now = timestamp();
        RunManifest {
            schema: SCHEMA,
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            threads,
            config,
            input: None,
            outputs: Vec::new(),
            started: now.clone(),
            finished: now,
            step_timings: Vec::new(),
        }
    }

    pub fn add_output(&mut self, path: &Path) -> Result<(), CliError> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    /// Stamps the finish time and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf, CliError> {
        self.finished = timestamp();
        let path = dir.join("manifest.json");
        crate::io::write_text(&path, &serde_json::to_string_pretty(&self).expect("manifest serializes"))?;
        Ok(path)
    }
}

fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
