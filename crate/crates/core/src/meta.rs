//! Bi-level label correction. The scorer takes one gradient step on the
//! learnable labels, the clean meta set judges the stepped scorer, and the
//! labels move against the gradient of that judgment.
//!
//! With `θ' = θ - α∇L_train(θ; B, Y_B)` and BCE, the derivative of the meta
//! loss `M(θ')` with respect to a batch label is
//! `∂M/∂y_i = (α/|B|) · ∇M(θ') · ∂z_i/∂θ`, the logit gradient taken at `θ`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Provenance;
use crate::labeler::{DatasetBundle, LabeledPrefix};
use crate::prm::{bce_logit, dot, loss_and_grad_xy, sgd_step, sigmoid, LossReport, Optimizer, ScorerParams, UpdateRule};

#[derive(Debug, thiserror::Error)]
pub enum MetaError {
    #[error("invalid meta configuration: {0}")]
    Config(String),
    #[error("feature dimension {got} does not match scorer d = {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    pub inner_lr: f64,
    pub meta_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub unroll_steps: usize,
    pub iterations: usize,
    pub seed: u64,
    pub commit_inner: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            inner_lr: 1e-4,
            meta_lr: 1e-2,
            weight_decay: 1e-2,
            batch_size: 8,
            unroll_steps: 1,
            iterations: 500,
            seed: 0,
            commit_inner: true,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<(), MetaError> {
        let bad = |m: String| Err(MetaError::Config(m));
        if !(self.inner_lr >= 0.0 && self.inner_lr.is_finite()) {
            return bad(format!("inner_lr {} must be finite and >= 0", self.inner_lr));
        }
        if !(self.meta_lr >= 0.0 && self.meta_lr.is_finite()) {
            return bad(format!("meta_lr {} must be finite and >= 0", self.meta_lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be finite and >= 0", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.unroll_steps != 1 {
            return bad(format!("unroll_steps = {} is not supported; only 1", self.unroll_steps));
        }
        Ok(())
    }
}

/// Train batches walk a fresh permutation each epoch (the last batch of an
/// epoch may be short); meta batches are drawn with replacement. The two use
/// separate streams, so the train sequence does not depend on the meta set.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    train_rng: ChaCha8Rng,
    meta_rng: ChaCha8Rng,
    perm: Vec<usize>,
    pos: usize,
    n_meta: usize,
    batch: usize,
}

impl BatchSampler {
    pub fn new(n_train: usize, n_meta: usize, batch: usize, seed: u64) -> Self {
        let mut meta_rng = ChaCha8Rng::seed_from_u64(seed);
        meta_rng.set_stream(1);
        Self {
            train_rng: ChaCha8Rng::seed_from_u64(seed),
            meta_rng,
            perm: (0..n_train).collect(),
            pos: n_train,
            n_meta,
            batch,
        }
    }

    pub fn next_train(&mut self) -> Vec<usize> {
        if self.pos >= self.perm.len() {
            self.perm.shuffle(&mut self.train_rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch).min(self.perm.len());
        let out = self.perm[self.pos..end].to_vec();
        self.pos = end;
        out
    }

    pub fn next_meta(&mut self) -> Vec<usize> {
        (0..self.batch).map(|_| self.meta_rng.gen_range(0..self.n_meta)).collect()
    }
}

/// One gradient step on the training loss: `θ' = θ - α∇L_train`.
pub fn inner_step(
    params: &ScorerParams,
    xs: &[&[f64]],
    ys: &[f64],
    inner_lr: f64,
    weight_decay: f64,
) -> (ScorerParams, LossReport) {
    let report = loss_and_grad_xy(params, xs, ys, weight_decay);
    (sgd_step(params, &report, inner_lr), report)
}

/// Mean BCE on the meta rows, no weight decay.
pub fn meta_loss(params: &ScorerParams, xs: &[&[f64]], ys: &[f64]) -> f64 {
    let sum: f64 = xs.iter().zip(ys).map(|(x, &y)| bce_logit(params.logit_unchecked(x), y)).sum();
    sum / xs.len() as f64
}

/// Meta loss and its gradient with respect to the parameters.
pub fn meta_loss_and_grad(params: &ScorerParams, xs: &[&[f64]], ys: &[f64]) -> (f64, Vec<f64>) {
    let r = loss_and_grad_xy(params, xs, ys, 0.0);
    (r.loss, r.grad_theta)
}

/// `∂M/∂Y_B` through one unrolled inner step, given the already-stepped `θ'`.
pub fn hypergrad_from_step(
    params: &ScorerParams,
    stepped: &ScorerParams,
    xs: &[&[f64]],
    meta_xs: &[&[f64]],
    meta_ys: &[f64],
    inner_lr: f64,
) -> Vec<f64> {
    let (_, g_meta) = meta_loss_and_grad(stepped, meta_xs, meta_ys);
    let scale = inner_lr / xs.len() as f64;
    let mut dz = vec![0.0; params.len()];
    xs.iter()
        .map(|x| {
            params.logit_and_dz(x, &mut dz);
            scale * dot(&g_meta, &dz)
        })
        .collect()
}

/// `∂M/∂Y_B` with `M(Y_B) = meta_loss(θ - α∇L_train(θ; B, Y_B))`.
pub fn hypergrad_labels(
    params: &ScorerParams,
    xs: &[&[f64]],
    ys: &[f64],
    meta_xs: &[&[f64]],
    meta_ys: &[f64],
    inner_lr: f64,
    weight_decay: f64,
) -> Vec<f64> {
    let (stepped, _) = inner_step(params, xs, ys, inner_lr, weight_decay);
    hypergrad_from_step(params, &stepped, xs, meta_xs, meta_ys, inner_lr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub train_loss: f64,
    pub meta_loss: f64,
    pub mean_abs_delta_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceInfo {
    pub config: MetaConfig,
    /// Update rule of the unrolled inner step.
    pub inner_update: UpdateRule,
    pub warm_start: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionTrace {
    pub records: Vec<TraceRecord>,
    /// Final learnable labels, in `bundle.train` order.
    pub labels: Vec<f64>,
    pub params: ScorerParams,
    pub info: TraceInfo,
}

impl CorrectionTrace {
    /// The bundle with its train labels replaced by the corrected ones.
    pub fn apply(&self, bundle: &DatasetBundle) -> DatasetBundle {
        let mut out = bundle.clone();
        for (row, &y) in out.train.iter_mut().zip(&self.labels) {
            row.label = y;
        }
        out
    }
}

fn feature_refs<'a>(rows: &'a [LabeledPrefix], d: usize) -> Result<Vec<&'a [f64]>, MetaError> {
    rows.iter()
        .map(|r| {
            let x = r.features.values.as_slice();
            if x.len() != d {
                return Err(MetaError::Dimension { expected: d, got: x.len() });
            }
            Ok(x)
        })
        .collect()
}

fn check_bundle(bundle: &DatasetBundle, params: &ScorerParams) -> Result<(), MetaError> {
    if bundle.train.is_empty() {
        return Err(MetaError::Config("empty train set".into()));
    }
    if bundle.meta.is_empty() {
        return Err(MetaError::Config("empty meta set".into()));
    }
    if let Some(r) = bundle.train.iter().find(|r| !r.learnable || r.provenance != Provenance::Mc) {
        return Err(MetaError::Config(format!("train row {}#{} is not learnable", r.trajectory_id, r.step_index)));
    }
    if let Some(r) = bundle.meta.iter().find(|r| r.learnable || r.provenance != Provenance::UnitTest) {
        return Err(MetaError::Config(format!("meta row {}#{} is not a clean label", r.trajectory_id, r.step_index)));
    }
    params.validate().map_err(|e| MetaError::Config(e.to_string()))
}

fn gather<'a>(xs: &[&'a [f64]], ys: &[f64], idx: &[usize]) -> (Vec<&'a [f64]>, Vec<f64>) {
    (idx.iter().map(|&i| xs[i]).collect(), idx.iter().map(|&i| ys[i]).collect())
}

/// Alternating label correction starting from `init` (warm start).
pub fn correct(bundle: &DatasetBundle, init: &ScorerParams, cfg: &MetaConfig) -> Result<CorrectionTrace, MetaError> {
    cfg.validate()?;
    check_bundle(bundle, init)?;
    let xs = feature_refs(&bundle.train, init.d)?;
    let meta_xs_all = feature_refs(&bundle.meta, init.d)?;
    let meta_ys_all: Vec<f64> = bundle.meta.iter().map(|r| r.label).collect();
    let mut y: Vec<f64> = bundle.train.iter().map(|r| r.label).collect();
    let mut theta = init.clone();
    let mut sampler = BatchSampler::new(xs.len(), meta_xs_all.len(), cfg.batch_size, cfg.seed);
    let mut records = Vec::with_capacity(cfg.iterations);

    for t in 0..cfg.iterations {
        let b = sampler.next_train();
        let m = sampler.next_meta();
        let (bx, by) = gather(&xs, &y, &b);
        let (mx, my) = gather(&meta_xs_all, &meta_ys_all, &m);

        let (stepped, report) = inner_step(&theta, &bx, &by, cfg.inner_lr, cfg.weight_decay);
        let g = hypergrad_from_step(&theta, &stepped, &bx, &mx, &my, cfg.inner_lr);
        let mut moved = 0.0;
        for (&i, gi) in b.iter().zip(&g) {
            let next = (y[i] - cfg.meta_lr * gi).clamp(0.0, 1.0);
            moved += (next - y[i]).abs();
            y[i] = next;
        }
        records.push(TraceRecord {
            iteration: t + 1,
            train_loss: report.loss,
            meta_loss: meta_loss(&stepped, &mx, &my),
            mean_abs_delta_y: moved / b.len() as f64,
        });
        if cfg.commit_inner {
            theta = stepped;
        }
    }
    Ok(CorrectionTrace {
        records,
        labels: y,
        params: theta,
        info: TraceInfo {
            config: *cfg,
            inner_update: UpdateRule::Sgd,
            warm_start: true,
        },
    })
}

/// Plain training on the current train labels with the same batch sequence as
/// [`correct`]. Returns the final parameters and the per-step training loss.
pub fn train_plain(
    bundle: &DatasetBundle,
    init: &ScorerParams,
    cfg: &MetaConfig,
    rule: UpdateRule,
) -> Result<(ScorerParams, Vec<f64>), MetaError> {
    cfg.validate()?;
    if bundle.train.is_empty() {
        return Err(MetaError::Config("empty train set".into()));
    }
    let xs = feature_refs(&bundle.train, init.d)?;
    let y: Vec<f64> = bundle.train.iter().map(|r| r.label).collect();
    let mut sampler = BatchSampler::new(xs.len(), bundle.meta.len().max(1), cfg.batch_size, cfg.seed);
    let mut opt = Optimizer::new(rule, cfg.inner_lr, init.len());
    let mut theta = init.clone();
    let mut losses = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let b = sampler.next_train();
        let (bx, by) = gather(&xs, &y, &b);
        let report = loss_and_grad_xy(&theta, &bx, &by, cfg.weight_decay);
        theta = opt.step(&theta, &report);
        losses.push(report.loss);
    }
    Ok((theta, losses))
}

/// Mean absolute error between two label vectors.
pub fn mae(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Share of meta rows whose rounded score matches the label.
pub fn meta_accuracy(params: &ScorerParams, meta: &[LabeledPrefix]) -> f64 {
    let hits = meta
        .iter()
        .filter(|r| (sigmoid(params.logit_unchecked(&r.features.values)) >= 0.5) == (r.label == 1.0))
        .count();
    hits as f64 / meta.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeler::{make_synthetic, SyntheticSpec};
    use crate::prm::Architecture;

    fn small() -> DatasetBundle {
        make_synthetic(&SyntheticSpec {
            train_size: 40,
            meta_size: 12,
            ..SyntheticSpec::canonical()
        })
        .unwrap()
        .bundle
    }

    #[test]
    fn sampler_covers_each_epoch_once() {
        let mut s = BatchSampler::new(10, 3, 4, 1);
        let mut epoch: Vec<usize> = (0..3).flat_map(|_| s.next_train()).collect();
        epoch.sort_unstable();
        assert_eq!(epoch, (0..10).collect::<Vec<_>>());
        assert!(s.next_meta().iter().all(|&i| i < 3));
    }

    #[test]
    fn zero_inner_lr_gives_zero_hypergrad() {
        let b = small();
        let p = ScorerParams::init(Architecture::Linear, 8, 0, 1);
        let xs: Vec<&[f64]> = b.train[..4].iter().map(|r| r.features.values.as_slice()).collect();
        let ys: Vec<f64> = b.train[..4].iter().map(|r| r.label).collect();
        let mx: Vec<&[f64]> = b.meta.iter().map(|r| r.features.values.as_slice()).collect();
        let my: Vec<f64> = b.meta.iter().map(|r| r.label).collect();
        let (stepped, _) = inner_step(&p, &xs, &ys, 0.0, 0.01);
        assert_eq!(stepped, p);
        assert!(hypergrad_labels(&p, &xs, &ys, &mx, &my, 0.0, 0.01).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_meta_lr_keeps_labels_and_cleans_frozen() {
        let b = small();
        let p = ScorerParams::init(Architecture::Mlp1, 8, 4, 3);
        let cfg = MetaConfig {
            meta_lr: 0.0,
            iterations: 30,
            ..Default::default()
        };
        let t = correct(&b, &p, &cfg).unwrap();
        let before: Vec<f64> = b.train.iter().map(|r| r.label).collect();
        assert_eq!(t.labels, before);
        assert_eq!(t.records.len(), 30);
    }

    #[test]
    fn unroll_depth_other_than_one_rejected() {
        let cfg = MetaConfig {
            unroll_steps: 2,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_sets_rejected() {
        let p = ScorerParams::init(Architecture::Linear, 8, 0, 1);
        let mut b = small();
        b.meta.clear();
        assert!(matches!(correct(&b, &p, &MetaConfig::default()), Err(MetaError::Config(_))));
        let mut b = small();
        b.train.clear();
        assert!(matches!(correct(&b, &p, &MetaConfig::default()), Err(MetaError::Config(_))));
    }

    #[test]
    fn labels_stay_in_unit_interval() {
        let b = small();
        let p = ScorerParams::init(Architecture::Linear, 8, 0, 1);
        let cfg = MetaConfig {
            inner_lr: 0.5,
            meta_lr: 50.0,
            iterations: 100,
            ..Default::default()
        };
        let t = correct(&b, &p, &cfg).unwrap();
        assert!(t.labels.iter().all(|y| (0.0..=1.0).contains(y)));
        assert!(t.records.iter().any(|r| r.mean_abs_delta_y > 0.0));
    }
}
