//! PRM training rows: Monte-Carlo pass fractions for middle prefixes (the
//! learnable set) and unit-test outcomes for final prefixes (the meta set).

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cof::{cof_prompt, decompose, prefixes, PrefixState};
use crate::corpus::{self, CorpusError, LabelRecord, Problem, ProblemStore, Provenance, TrajectoryStore};
use crate::judge::{final_label, JudgeError, Verifier};
use crate::policy::{sample, PolicyBackend, PolicyError, PolicyRequest, RetryPolicy};
use crate::prm::{dot, featurize, sigmoid, FeatureVector};

pub const DEFAULT_K: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum LabelError {
    #[error("no rollout of {trajectory_id} step {step_index} produced a complete program")]
    Degenerate { trajectory_id: String, step_index: usize },
    #[error("invalid labeling request: {0}")]
    Config(String),
    #[error("trajectory {trajectory} refers to unknown problem {problem}")]
    UnknownProblem { trajectory: String, problem: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("bundle file {path}: {msg}")]
    Bundle { path: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrefix {
    pub trajectory_id: String,
    pub step_index: usize,
    pub features: FeatureVector,
    pub label: f64,
    pub provenance: Provenance,
    pub learnable: bool,
}

impl LabeledPrefix {
    pub fn mc(trajectory_id: impl Into<String>, step_index: usize, features: FeatureVector, label: f64) -> Self {
        Self {
            trajectory_id: trajectory_id.into(),
            step_index,
            features,
            label,
            provenance: Provenance::Mc,
            learnable: true,
        }
    }

    pub fn unit_test(trajectory_id: impl Into<String>, step_index: usize, features: FeatureVector, passed: bool) -> Self {
        Self {
            trajectory_id: trajectory_id.into(),
            step_index,
            features,
            label: if passed { 1.0 } else { 0.0 },
            provenance: Provenance::UnitTest,
            learnable: false,
        }
    }

    pub fn key(&self) -> (&str, usize) {
        (&self.trajectory_id, self.step_index)
    }

    pub fn record(&self) -> LabelRecord {
        LabelRecord {
            trajectory_id: self.trajectory_id.clone(),
            step_index: self.step_index,
            value: self.label,
            provenance: self.provenance,
            learnable: self.learnable,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.label) {
            return Err(format!("label {} outside [0, 1]", self.label));
        }
        match self.provenance {
            Provenance::UnitTest if self.learnable || (self.label != 0.0 && self.label != 1.0) => {
                Err("unit_test rows must be frozen 0/1 labels".into())
            }
            Provenance::Mc if !self.learnable => Err("mc rows must be learnable".into()),
            _ if !self.features.is_finite() => Err("non-finite feature".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub train: Vec<LabeledPrefix>,
    pub meta: Vec<LabeledPrefix>,
}

#[derive(Serialize, Deserialize)]
struct FeatureRow {
    trajectory_id: String,
    step_index: usize,
    values: Vec<f64>,
    schema_version: u32,
}

#[derive(Serialize, Deserialize)]
struct TruthRow {
    trajectory_id: String,
    step_index: usize,
    value: f64,
}

fn bundle_err(path: &Path, msg: impl ToString) -> LabelError {
    LabelError::Bundle {
        path: path.display().to_string(),
        msg: msg.to_string(),
    }
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), LabelError> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, &row).expect("row serializes");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| bundle_err(path, e))?;
    f.write_all(&out).map_err(|e| bundle_err(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, LabelError> {
    let f = fs::File::open(path).map_err(|e| bundle_err(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| bundle_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| bundle_err(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(rows)
}

impl DatasetBundle {
    pub const TRAIN_FILE: &'static str = "train.jsonl";
    pub const META_FILE: &'static str = "meta.jsonl";
    pub const FEATURES_FILE: &'static str = "features.jsonl";
    pub const TRUTH_FILE: &'static str = "truth.jsonl";

    pub fn validate(&self) -> Result<(), String> {
        let mut seen = HashSet::new();
        for (part, rows, want) in [("train", &self.train, Provenance::Mc), ("meta", &self.meta, Provenance::UnitTest)] {
            for r in rows {
                r.check().map_err(|e| format!("{part} {}#{}: {e}", r.trajectory_id, r.step_index))?;
                if r.provenance != want {
                    return Err(format!("{part} {}#{} has provenance {:?}", r.trajectory_id, r.step_index, r.provenance));
                }
                if !seen.insert(r.key()) {
                    return Err(format!("duplicate row {}#{}", r.trajectory_id, r.step_index));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> Option<usize> {
        self.train.iter().chain(&self.meta).next().map(|r| r.features.dim())
    }

    /// Writes train.jsonl and meta.jsonl in the label format plus features.jsonl.
    pub fn save(&self, dir: &Path) -> Result<(), LabelError> {
        fs::create_dir_all(dir).map_err(|e| bundle_err(dir, e))?;
        let train: Vec<_> = self.train.iter().map(LabeledPrefix::record).collect();
        let meta: Vec<_> = self.meta.iter().map(LabeledPrefix::record).collect();
        corpus::save_labels_unchecked(&dir.join(Self::TRAIN_FILE), &train)?;
        corpus::save_labels_unchecked(&dir.join(Self::META_FILE), &meta)?;
        write_jsonl(
            &dir.join(Self::FEATURES_FILE),
            self.train.iter().chain(&self.meta).map(|r| FeatureRow {
                trajectory_id: r.trajectory_id.clone(),
                step_index: r.step_index,
                values: r.features.values.clone(),
                schema_version: r.features.schema_version,
            }),
        )
    }

    pub fn load(dir: &Path) -> Result<Self, LabelError> {
        let fpath = dir.join(Self::FEATURES_FILE);
        let mut features: HashMap<(String, usize), FeatureVector> = HashMap::new();
        for row in read_jsonl::<FeatureRow>(&fpath)? {
            features.insert(
                (row.trajectory_id, row.step_index),
                FeatureVector {
                    values: row.values,
                    schema_version: row.schema_version,
                },
            );
        }
        let mut attach = |file: &str| -> Result<Vec<LabeledPrefix>, LabelError> {
            let path = dir.join(file);
            corpus::load_labels(&path)?
                .into_iter()
                .map(|rec| {
                    let features = features
                        .remove(&(rec.trajectory_id.clone(), rec.step_index))
                        .ok_or_else(|| bundle_err(&fpath, format!("no features for {}#{}", rec.trajectory_id, rec.step_index)))?;
                    Ok(LabeledPrefix {
                        trajectory_id: rec.trajectory_id,
                        step_index: rec.step_index,
                        features,
                        label: rec.value,
                        provenance: rec.provenance,
                        learnable: rec.learnable,
                    })
                })
                .collect()
        };
        let bundle = Self {
            train: attach(Self::TRAIN_FILE)?,
            meta: attach(Self::META_FILE)?,
        };
        bundle.validate().map_err(|e| bundle_err(dir, e))?;
        Ok(bundle)
    }
}

/// Save ground-truth labels (train order) next to a bundle.
pub fn save_truth(dir: &Path, train: &[LabeledPrefix], truth: &[f64]) -> Result<(), LabelError> {
    write_jsonl(
        &dir.join(DatasetBundle::TRUTH_FILE),
        train.iter().zip(truth).map(|(r, &value)| TruthRow {
            trajectory_id: r.trajectory_id.clone(),
            step_index: r.step_index,
            value,
        }),
    )
}

/// Ground truth for `train`, in its order. `None` when the file is absent.
pub fn load_truth(dir: &Path, train: &[LabeledPrefix]) -> Result<Option<Vec<f64>>, LabelError> {
    let path = dir.join(DatasetBundle::TRUTH_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let by_key: HashMap<(String, usize), f64> = read_jsonl::<TruthRow>(&path)?
        .into_iter()
        .map(|r| ((r.trajectory_id, r.step_index), r.value))
        .collect();
    train
        .iter()
        .map(|r| {
            by_key
                .get(&(r.trajectory_id.clone(), r.step_index))
                .copied()
                .ok_or_else(|| bundle_err(&path, format!("no truth for {}#{}", r.trajectory_id, r.step_index)))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McOptions {
    pub k: usize,
    pub seed: u64,
    pub temperature: f64,
    #[serde(skip)]
    pub retry: RetryPolicy,
}

impl Default for McOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            seed: 0,
            temperature: 1.0,
            retry: RetryPolicy::default(),
        }
    }
}

fn rollout_seed(base: u64, prefix: &PrefixState, j: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update((prefix.trajectory_id.len() as u64).to_le_bytes());
    h.update(prefix.trajectory_id.as_bytes());
    h.update((prefix.step_index as u64).to_le_bytes());
    h.update((j as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rollouts {
    pub k: usize,
    pub completed: usize,
    pub passed: usize,
}

/// Runs the `k` rollouts of one prefix. A rollout that yields no decomposable
/// program, or whose policy call keeps failing transiently, counts as a failure.
pub fn mc_rollouts(
    prefix: &PrefixState,
    problem: &Problem,
    backend: &dyn PolicyBackend,
    verifier: &dyn Verifier,
    opts: &McOptions,
) -> Result<Rollouts, LabelError> {
    if prefix.is_final {
        return Err(LabelError::Config(format!(
            "{} step {} is the final prefix",
            prefix.trajectory_id, prefix.step_index
        )));
    }
    if opts.k == 0 {
        return Err(LabelError::Config("k must be >= 1".into()));
    }
    let prompt = cof_prompt(problem);
    let code = prefix.code();
    let mut counts = Rollouts {
        k: opts.k,
        completed: 0,
        passed: 0,
    };
    for j in 0..opts.k {
        let req = PolicyRequest::prefix_completion(
            prompt.clone(),
            code.to_owned(),
            opts.temperature,
            rollout_seed(opts.seed, prefix, j),
        );
        let completion = match sample(backend, &problem.id, &req, &opts.retry) {
            Ok(c) => c,
            Err(e) if e.is_retryable() => {
                log::warn!("rollout {j} of {}#{}: {e}", prefix.trajectory_id, prefix.step_index);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let program = format!("{code}{completion}");
        if decompose(&program).is_err() {
            continue;
        }
        counts.completed += 1;
        if verifier.verify(&program, &problem.tests)?.passed {
            counts.passed += 1;
        }
    }
    Ok(counts)
}

/// Pass fraction of `k` policy completions of a middle prefix.
pub fn mc_label(
    prefix: &PrefixState,
    problem: &Problem,
    backend: &dyn PolicyBackend,
    verifier: &dyn Verifier,
    opts: &McOptions,
) -> Result<f64, LabelError> {
    let r = mc_rollouts(prefix, problem, backend, verifier, opts)?;
    if r.completed == 0 {
        return Err(LabelError::Degenerate {
            trajectory_id: prefix.trajectory_id.clone(),
            step_index: prefix.step_index,
        });
    }
    Ok(r.passed as f64 / r.k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BundleOptions {
    pub mc: McOptions,
    /// Round MC labels to 0/1 at this threshold.
    pub binarize: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BundleCounts {
    pub trajectories: usize,
    pub skipped_decomposition: usize,
    pub degenerate_prefixes: usize,
    pub train_rows: usize,
    pub meta_rows: usize,
    pub meta_passed: usize,
}

enum Task<'a> {
    Middle(PrefixState, &'a Problem),
    Final(PrefixState, &'a Problem, &'a str),
}

enum Done {
    Row(LabeledPrefix),
    Degenerate,
}

/// Every decomposable `n`-step trajectory contributes `n-1` MC rows to
/// `train` and one unit-test row to `meta`. Rows come out in trajectory order.
pub fn build_bundle(
    trajectories: &TrajectoryStore,
    problems: &ProblemStore,
    backend: &dyn PolicyBackend,
    verifier: &dyn Verifier,
    opts: &BundleOptions,
) -> Result<(DatasetBundle, BundleCounts), LabelError> {
    if let Some(t) = opts.binarize {
        if !(0.0..=1.0).contains(&t) {
            return Err(LabelError::Config(format!("binarize threshold {t} outside [0, 1]")));
        }
    }
    let mut counts = BundleCounts::default();
    let mut tasks = Vec::new();
    for t in trajectories.iter() {
        counts.trajectories += 1;
        let problem = problems.get(&t.problem_id).ok_or_else(|| LabelError::UnknownProblem {
            trajectory: t.id.clone(),
            problem: t.problem_id.clone(),
        })?;
        let d = match decompose(&t.source) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("skipping trajectory {}: {e}", t.id);
                counts.skipped_decomposition += 1;
                continue;
            }
        };
        for p in prefixes(problem, &t.id, &d) {
            tasks.push(if p.is_final {
                Task::Final(p, problem, &t.source)
            } else {
                Task::Middle(p, problem)
            });
        }
    }

    let done: Vec<Result<Done, LabelError>> = tasks
        .par_iter()
        .map(|task| match task {
            Task::Middle(p, problem) => match mc_label(p, problem, backend, verifier, &opts.mc) {
                Ok(v) => {
                    let v = match opts.binarize {
                        Some(t) => f64::from(u8::from(v >= t)),
                        None => v,
                    };
                    Ok(Done::Row(LabeledPrefix::mc(&p.trajectory_id, p.step_index, featurize(p, problem), v)))
                }
                Err(e @ LabelError::Degenerate { .. }) => {
                    log::warn!("{e}");
                    Ok(Done::Degenerate)
                }
                Err(e) => Err(e),
            },
            Task::Final(p, problem, source) => {
                let verdict = verifier.verify(source, &problem.tests)?;
                Ok(Done::Row(LabeledPrefix::unit_test(
                    &p.trajectory_id,
                    p.step_index,
                    featurize(p, problem),
                    final_label(&verdict) == 1.0,
                )))
            }
        })
        .collect();

    let mut bundle = DatasetBundle::default();
    for d in done {
        match d? {
            Done::Row(r) if r.provenance == Provenance::UnitTest => {
                counts.meta_passed += usize::from(r.label == 1.0);
                bundle.meta.push(r);
            }
            Done::Row(r) => bundle.train.push(r),
            Done::Degenerate => counts.degenerate_prefixes += 1,
        }
    }
    counts.train_rows = bundle.train.len();
    counts.meta_rows = bundle.meta.len();
    Ok((bundle, counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Noise {
    /// Replace a label `y` with `1 - y` with probability `rate`.
    Flip { rate: f64 },
    /// Add `N(0, sigma²)` and clip to [0, 1].
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub d: usize,
    pub theta_star: Vec<f64>,
    pub train_size: usize,
    pub meta_size: usize,
    pub noise: Noise,
    /// Threshold train truths at 0.5. Meta labels are always 0/1.
    pub binarize: bool,
    pub seed: u64,
}

impl SyntheticSpec {
    /// d = 8, 200 train rows with 30% flipped 0/1 labels, 100 meta rows, seed 7.
    pub fn canonical() -> Self {
        Self {
            d: 8,
            theta_star: vec![1.5, -1.0, 0.8, -0.6, 1.2, -0.4, 0.3, -1.1],
            train_size: 200,
            meta_size: 100,
            noise: Noise::Flip { rate: 0.3 },
            binarize: true,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBundle {
    pub bundle: DatasetBundle,
    /// Uncorrupted train labels, in `bundle.train` order.
    pub truth: Vec<f64>,
}

pub fn true_label(theta_star: &[f64], x: &[f64], binarize: bool) -> f64 {
    let p = sigmoid(dot(theta_star, x));
    if binarize {
        f64::from(u8::from(p >= 0.5))
    } else {
        p
    }
}

/// Planted-model bundle: features ~ N(0, I), labels from `σ(θ*·x)`.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SyntheticBundle, LabelError> {
    match spec.noise {
        Noise::Flip { rate } if !(0.0..=1.0).contains(&rate) => {
            return Err(LabelError::Config(format!("flip rate {rate} outside [0, 1]")))
        }
        Noise::Gaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
            return Err(LabelError::Config(format!("noise sigma {sigma} must be finite and >= 0")))
        }
        _ => {}
    }
    if spec.theta_star.len() != spec.d {
        return Err(LabelError::Config(format!(
            "theta_star has {} entries, d = {}",
            spec.theta_star.len(),
            spec.d
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..spec.d).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    };
    let train_x = draw(spec.train_size);
    let meta_x = draw(spec.meta_size);

    let truth: Vec<f64> = train_x
        .iter()
        .map(|x| true_label(&spec.theta_star, x, spec.binarize))
        .collect();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6e6f_6973_65);
    let noisy = truth.iter().map(|&y| match spec.noise {
        Noise::Flip { rate } => {
            if noise_rng.gen::<f64>() < rate {
                1.0 - y
            } else {
                y
            }
        }
        Noise::Gaussian { sigma } => (y + sigma * noise_rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0),
    });
    let train = train_x
        .into_iter()
        .zip(noisy)
        .enumerate()
        .map(|(i, (x, y))| LabeledPrefix::mc(format!("syn-train-{i:05}"), 1, FeatureVector::new(x), y))
        .collect();
    let meta = meta_x
        .into_iter()
        .enumerate()
        .map(|(i, x)| {
            let passed = true_label(&spec.theta_star, &x, true) == 1.0;
            LabeledPrefix::unit_test(format!("syn-meta-{i:05}"), 1, FeatureVector::new(x), passed)
        })
        .collect();
    Ok(SyntheticBundle {
        bundle: DatasetBundle { train, meta },
        truth,
    })
}
