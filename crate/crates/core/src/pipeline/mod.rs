//! Stage runner. Every stage reads its inputs from earlier stage directories
//! under `runs/<id>/`, writes into `runs/<id>/<stage>/` and appends one entry
//! to `runs/<id>/manifest.json`.

mod config;
mod manifest;
mod stages;

pub use config::{
    GenerateSection, JudgeSection, LabelSection, ParamsSource, Paths, PipelineConfig, PrmSection, RerankSection,
    SynthSection, TrainSection,
};
pub use manifest::{file_digest, sha256_hex, RunManifest, StageEntry, Versions, MANIFEST_FILE};
pub use stages::RerankOverrides;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("missing {what}: {}", path.display())]
    MissingInput { what: String, path: PathBuf },
    #[error("input {path} changed since it was written (recorded {recorded}, found {found})")]
    Digest { path: String, recorded: String, found: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{0}")]
    Stage(String),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        }
    }

    pub(crate) fn stage(e: impl fmt::Display) -> Self {
        Self::Stage(e.to_string())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::MissingInput { .. } => "missing_input",
            Self::Digest { .. } => "digest_mismatch",
            Self::Config(_) => "config",
            Self::Io { .. } => "io",
            Self::Stage(_) => "stage_failed",
        }
    }

    /// 2 for a missing input, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::MissingInput { .. } => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self, stage: Option<Stage>) -> serde_json::Value {
        let mut v = serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
        });
        if let Some(s) = stage {
            v["stage"] = s.name().into();
        }
        if let Self::MissingInput { path, .. } = self {
            v["path"] = path.display().to_string().into();
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Generate,
    Decompose,
    Label,
    Train,
    Correct,
    Rerank,
    Eval,
    Synth,
}

impl Stage {
    /// The offline pipeline, in order.
    pub const FULL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Generate,
        Stage::Decompose,
        Stage::Label,
        Stage::Train,
        Stage::Correct,
        Stage::Rerank,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Generate => "generate",
            Stage::Decompose => "decompose",
            Stage::Label => "label",
            Stage::Train => "train",
            Stage::Correct => "correct",
            Stage::Rerank => "rerank",
            Stage::Eval => "eval",
            Stage::Synth => "synth",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub(crate) fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub stage: Stage,
    pub run_dir: PathBuf,
    pub outputs: BTreeMap<String, String>,
    pub summary: serde_json::Value,
}

/// Bookkeeping for one stage execution.
pub(crate) struct Ctx<'a> {
    pub cfg: &'a PipelineConfig,
    pub stage: Stage,
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    /// Write here instead of `runs/<id>/<stage>/` and keep no manifest.
    detached: Option<PathBuf>,
    /// Problems file replacing the ingest output.
    pub problems: Option<PathBuf>,
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a PipelineConfig, stage: Stage) -> Result<Self, PipelineError> {
        let run_dir = cfg.run_dir();
        std::fs::create_dir_all(&run_dir).map_err(|e| PipelineError::io(&run_dir, e))?;
        let manifest = RunManifest::load_or_new(&run_dir, &cfg.run_id)?;
        Ok(Self {
            cfg,
            stage,
            run_dir,
            manifest,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            detached: None,
            problems: None,
        })
    }

    fn detached(cfg: &'a PipelineConfig, stage: Stage, direct: &Direct) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(&direct.out).map_err(|e| PipelineError::io(&direct.out, e))?;
        Ok(Self {
            cfg,
            stage,
            run_dir: direct.out.clone(),
            manifest: RunManifest::new(&cfg.run_id),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            detached: Some(direct.out.clone()),
            problems: direct.problems.clone(),
        })
    }

    pub fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.run_dir)
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_else(|_| path.display().to_string())
    }

    pub fn stage_dir(&self) -> Result<PathBuf, PipelineError> {
        if let Some(out) = &self.detached {
            return Ok(out.clone());
        }
        let dir = self.run_dir.join(self.stage.name());
        std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        Ok(dir)
    }

    pub fn stage_path(&self, stage: Stage, file: &str) -> PathBuf {
        self.run_dir.join(stage.name()).join(file)
    }

    /// Declares an input file: it must exist, and when an earlier stage of
    /// this run wrote it, its digest must still match.
    pub fn input(&mut self, what: &str, path: &Path) -> Result<PathBuf, PipelineError> {
        if !path.is_file() {
            return Err(PipelineError::MissingInput {
                what: what.into(),
                path: path.to_owned(),
            });
        }
        let rel = self.rel(path);
        let found = file_digest(path)?;
        if let Some(recorded) = self.manifest.recorded_digest(&rel) {
            if recorded != found {
                return Err(PipelineError::Digest {
                    path: rel,
                    recorded: recorded.into(),
                    found,
                });
            }
        }
        self.inputs.insert(rel, found);
        Ok(path.to_owned())
    }

    pub fn builtin_input(&mut self, name: &str, bytes: &[u8]) {
        self.inputs.insert(format!("builtin:{name}"), sha256_hex(bytes));
    }

    pub fn output(&mut self, path: &Path) -> Result<(), PipelineError> {
        let digest = file_digest(path)?;
        self.outputs.insert(self.rel(path), digest);
        Ok(())
    }

    fn finish(mut self, started: Instant, started_at: String, summary: serde_json::Value) -> Result<StageReport, PipelineError> {
        let config = self.cfg.to_toml();
        self.manifest.entries.push(StageEntry {
            stage: self.stage.name().into(),
            started_at,
            duration_ms: started.elapsed().as_millis() as u64,
            config_sha256: sha256_hex(config.as_bytes()),
            inputs: std::mem::take(&mut self.inputs),
            outputs: self.outputs.clone(),
            summary: summary.clone(),
        });
        self.manifest.config = config;
        if self.detached.is_none() {
            self.manifest.save(&self.run_dir)?;
        }
        Ok(StageReport {
            stage: self.stage,
            run_dir: self.run_dir,
            outputs: self.outputs,
            summary,
        })
    }
}

/// Runs one stage and records it in the run manifest.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<StageReport, PipelineError> {
    run_stage_with(stage, cfg, &RerankOverrides::default())
}

pub fn run_stage_with(stage: Stage, cfg: &PipelineConfig, rerank: &RerankOverrides) -> Result<StageReport, PipelineError> {
    cfg.validate()?;
    let ctx = Ctx::new(cfg, stage)?;
    execute(ctx, rerank)
}

/// Output location for running a stage outside any run directory.
#[derive(Debug, Clone)]
pub struct Direct {
    pub out: PathBuf,
    pub problems: Option<PathBuf>,
}

/// Runs a stage against explicit inputs, writing only into `direct.out`.
/// No manifest is read or written.
pub fn run_direct(
    stage: Stage,
    cfg: &PipelineConfig,
    direct: &Direct,
    rerank: &RerankOverrides,
) -> Result<StageReport, PipelineError> {
    cfg.validate()?;
    let ctx = Ctx::detached(cfg, stage, direct)?;
    execute(ctx, rerank)
}

fn execute(mut ctx: Ctx, rerank: &RerankOverrides) -> Result<StageReport, PipelineError> {
    let stage = ctx.stage;
    let started = Instant::now();
    let started_at = humantime::format_rfc3339_seconds(std::time::SystemTime::now()).to_string();
    log::info!("stage {stage} in {}", ctx.run_dir.display());
    let summary = match stage {
        Stage::Ingest => stages::ingest(&mut ctx)?,
        Stage::Generate => stages::generate(&mut ctx)?,
        Stage::Decompose => stages::decompose(&mut ctx)?,
        Stage::Label => stages::label(&mut ctx)?,
        Stage::Train => stages::train(&mut ctx)?,
        Stage::Correct => stages::correct(&mut ctx)?,
        Stage::Rerank => stages::rerank(&mut ctx, rerank)?,
        Stage::Eval => stages::eval(&mut ctx)?,
        Stage::Synth => stages::synth(&mut ctx)?,
    };
    ctx.finish(started, started_at, summary)
}

/// Every stage of the offline pipeline in order; stops at the first failure.
pub fn run_all(cfg: &PipelineConfig) -> Result<Vec<StageReport>, (Stage, PipelineError)> {
    Stage::FULL
        .iter()
        .map(|&s| run_stage(s, cfg).map_err(|e| (s, e)))
        .collect()
}

/// Files under the run directory that the manifest does not reference.
pub fn unreferenced_files(run_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let manifest = RunManifest::load_or_new(run_dir, "")?;
    let known: std::collections::HashSet<PathBuf> = manifest.referenced().into_iter().collect();
    let mut stack = vec![run_dir.to_owned()];
    let mut out = Vec::new();
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| PipelineError::io(&dir, e))? {
            let path = entry.map_err(|e| PipelineError::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(run_dir).expect("under run dir").to_owned();
                if !known.contains(&rel) {
                    out.push(rel);
                }
            }
        }
    }
    out.sort();
    Ok(out)
}
