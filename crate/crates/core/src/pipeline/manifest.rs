use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub cofprm: String,
    pub cof_prompt: u32,
    pub feature_schema: u32,
    pub labels_format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            cofprm: env!("CARGO_PKG_VERSION").into(),
            cof_prompt: crate::cof::COF_PROMPT_VERSION,
            feature_schema: crate::prm::FEATURE_SCHEMA_VERSION,
            labels_format: crate::corpus::LABELS_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: String,
    pub started_at: String,
    pub duration_ms: u64,
    pub config_sha256: String,
    /// Input path (relative to the run directory when inside it) → sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the run directory → sha256.
    pub outputs: BTreeMap<String, String>,
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub versions: Versions,
    /// Configuration of the most recent stage, as TOML.
    pub config: String,
    pub entries: Vec<StageEntry>,
}

impl RunManifest {
    pub fn new(run_id: &str) -> Self {
        Self {
            run_id: run_id.into(),
            versions: Versions::default(),
            config: String::new(),
            entries: Vec::new(),
        }
    }

    pub fn load_or_new(run_dir: &Path, run_id: &str) -> Result<Self, PipelineError> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::new(run_id));
        }
        let text = fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Stage(format!("corrupt manifest {}: {e}", path.display())))
    }

    pub fn save(&self, run_dir: &Path) -> Result<(), PipelineError> {
        let path = run_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| PipelineError::io(&path, e))
    }

    /// The digest recorded for `rel` by the latest stage that wrote it.
    pub fn recorded_digest(&self, rel: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find_map(|e| e.outputs.get(rel).map(String::as_str))
    }

    /// Latest entry among `stages`.
    pub fn latest_of(&self, stages: &[&str]) -> Option<&StageEntry> {
        self.entries.iter().rev().find(|e| stages.contains(&e.stage.as_str()))
    }

    /// Every path referenced by the manifest, relative to the run directory.
    pub fn referenced(&self) -> Vec<PathBuf> {
        let mut out: Vec<PathBuf> = self
            .entries
            .iter()
            .flat_map(|e| e.outputs.keys())
            .map(PathBuf::from)
            .collect();
        out.push(PathBuf::from(MANIFEST_FILE));
        out.sort();
        out.dedup();
        out
    }
}
