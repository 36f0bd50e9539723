use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SplitSpec;
use crate::judge::Limits;
use crate::labeler::{Noise, SyntheticSpec, DEFAULT_K};
use crate::meta::MetaConfig;
use crate::policy::PolicyConfig;
use crate::prm::{Architecture, UpdateRule, DEFAULT_HIDDEN};
use crate::rank::{Aggregator, RerankMode};

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Problems file (JSON lines); the bundled mini-corpus when absent.
    pub problems: Option<PathBuf>,
    /// Trajectories to label instead of the generate stage's output.
    pub trajectories: Option<PathBuf>,
    /// Bundle directory for train/correct instead of the latest label or synth output.
    pub bundle: Option<PathBuf>,
    pub runs: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            problems: None,
            trajectories: None,
            bundle: None,
            runs: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeSection {
    /// Interpreter name or path; `JUDGE_INTERPRETER` or `python3` when absent.
    pub interpreter: Option<String>,
    pub workers: usize,
    #[serde(with = "crate::judge::duration_ms")]
    pub wall_time_ms: std::time::Duration,
    pub memory_bytes: u64,
    pub max_output_bytes: u64,
}

impl Default for JudgeSection {
    fn default() -> Self {
        let l = Limits::default();
        Self {
            interpreter: None,
            workers: 8,
            wall_time_ms: l.wall_time_per_test,
            memory_bytes: l.memory,
            max_output_bytes: l.max_output,
        }
    }
}

impl JudgeSection {
    pub fn limits(&self) -> Limits {
        Limits {
            wall_time_per_test: self.wall_time_ms,
            memory: self.memory_bytes,
            max_output: self.max_output_bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    /// Trajectories per train-split problem.
    pub trajectories_per_problem: usize,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            trajectories_per_problem: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelSection {
    pub k: usize,
    pub binarize: Option<f64>,
}

impl Default for LabelSection {
    fn default() -> Self {
        Self { k: DEFAULT_K, binarize: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrmSection {
    pub architecture: Architecture,
    pub hidden: usize,
}

impl Default for PrmSection {
    fn default() -> Self {
        Self {
            architecture: Architecture::Linear,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub rule: UpdateRule,
    pub lr: f64,
    pub iterations: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            rule: UpdateRule::Sgd,
            lr: 1e-4,
            iterations: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamsSource {
    #[default]
    Correct,
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankSection {
    pub n_candidates: usize,
    pub mode: RerankMode,
    pub aggregator: Aggregator,
    /// Which stage's params.json scores the candidates.
    pub params_from: ParamsSource,
}

impl Default for RerankSection {
    fn default() -> Self {
        Self {
            n_candidates: 4,
            mode: RerankMode::PrmMean,
            aggregator: Aggregator::Mean,
            params_from: ParamsSource::Correct,
        }
    }
}

/// Planted-model bundle settings. The seed is the run's global seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub d: usize,
    pub theta_star: Vec<f64>,
    pub train_size: usize,
    pub meta_size: usize,
    pub noise: Noise,
    pub binarize: bool,
}

impl Default for SynthSection {
    fn default() -> Self {
        let c = SyntheticSpec::canonical();
        Self {
            d: c.d,
            theta_star: c.theta_star,
            train_size: c.train_size,
            meta_size: c.meta_size,
            noise: c.noise,
            binarize: c.binarize,
        }
    }
}

impl SynthSection {
    pub fn spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            d: self.d,
            theta_star: self.theta_star.clone(),
            train_size: self.train_size,
            meta_size: self.meta_size,
            noise: self.noise,
            binarize: self.binarize,
            seed,
        }
    }
}

/// Whole-run configuration. `seed` feeds every stochastic component; the
/// `meta.seed` key is overwritten by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub run_id: String,
    pub paths: Paths,
    pub split: SplitSpec,
    pub policy: PolicyConfig,
    pub judge: JudgeSection,
    pub generate: GenerateSection,
    pub label: LabelSection,
    pub prm: PrmSection,
    pub train: TrainSection,
    pub meta: MetaConfig,
    pub rerank: RerankSection,
    pub synth: SynthSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            run_id: "default".into(),
            paths: Paths::default(),
            split: SplitSpec::default(),
            policy: PolicyConfig::default(),
            judge: JudgeSection::default(),
            generate: GenerateSection::default(),
            label: LabelSection::default(),
            prm: PrmSection::default(),
            train: TrainSection::default(),
            meta: MetaConfig {
                seed: 7,
                ..MetaConfig::default()
            },
            rerank: RerankSection::default(),
            synth: SynthSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.meta.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|_| PipelineError::MissingInput {
            what: "config".into(),
            path: path.to_owned(),
        })?;
        Self::from_toml(&text)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.meta.seed = seed;
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn run_dir(&self) -> PathBuf {
        self.paths.runs.join(&self.run_id)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) || self.run_id.starts_with('.') {
            return bad(format!("run_id {:?} must be a plain directory name", self.run_id));
        }
        if self.generate.trajectories_per_problem == 0 || self.rerank.n_candidates == 0 {
            return bad("trajectories_per_problem and n_candidates must be >= 1".into());
        }
        if self.label.k == 0 {
            return bad("label.k must be >= 1".into());
        }
        if self.prm.architecture == Architecture::Mlp1 && self.prm.hidden == 0 {
            return bad("prm.hidden must be >= 1 for mlp1".into());
        }
        self.meta.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.judge.limits().validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = PipelineConfig::from_toml(
            "seed = 11\n[meta]\ninner_lr = 0.5\niterations = 20\n[rerank]\nmode = \"orm\"\n[synth]\nnoise = { kind = \"gaussian\", sigma = 0.2 }\n",
        )
        .unwrap();
        assert_eq!(cfg.meta.seed, 11);
        assert_eq!(cfg.meta.inner_lr, 0.5);
        assert_eq!(cfg.meta.meta_lr, 1e-2);
        assert_eq!(cfg.rerank.mode, RerankMode::Orm);
        assert_eq!(cfg.synth.noise, Noise::Gaussian { sigma: 0.2 });
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml("[meta]\nlearning_rate = 1.0\n").is_err());
        let cfg = PipelineConfig {
            run_id: "../x".into(),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
