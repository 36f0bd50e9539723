//! Desk-scale step scorer: handcrafted prefix features, a sigmoid-output
//! linear or one-hidden-layer model, and closed-form BCE gradients.

mod features;

pub use features::{
    featurize, FeatureVector, FEATURE_DIM, FEATURE_NAMES, FEATURE_SCHEMA_VERSION, HANDCRAFTED,
    HASH_BUCKETS,
};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::labeler::LabeledPrefix;

pub const DEFAULT_HIDDEN: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum PrmError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {0} outside [0, 1]")]
    LabelRange(f64),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    #[default]
    Linear,
    Mlp1,
}

/// Flat parameter vector.
///
/// Layout: linear is `[w (d), b]`; mlp1 is `[W1 (h×d, row-major), b1 (h), w2 (h), b2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerParams {
    pub architecture: Architecture,
    pub d: usize,
    pub h: usize,
    pub weights: Vec<f64>,
    pub schema_version: u32,
    pub init_seed: u64,
}

pub fn n_weights(arch: Architecture, d: usize, h: usize) -> usize {
    match arch {
        Architecture::Linear => d + 1,
        Architecture::Mlp1 => d * h + h + h + 1,
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy of `sigmoid(z)` against a soft label `y`.
#[inline]
pub fn bce_logit(z: f64, y: f64) -> f64 {
    softplus(z) - y * z
}

impl ScorerParams {
    /// Weights uniform in (-0.1, 0.1), biases zero.
    pub fn init(architecture: Architecture, d: usize, h: usize, seed: u64) -> Self {
        let mut p = Self::zeros(architecture, d, h);
        p.init_seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let matrix = match architecture {
            Architecture::Linear => 0..d,
            Architecture::Mlp1 => 0..d * h,
        };
        for w in &mut p.weights[matrix] {
            *w = rng.gen_range(-0.1..0.1);
        }
        if architecture == Architecture::Mlp1 {
            let w2 = d * h + h..d * h + 2 * h;
            for w in &mut p.weights[w2] {
                *w = rng.gen_range(-0.1..0.1);
            }
        }
        p
    }

    pub fn zeros(architecture: Architecture, d: usize, h: usize) -> Self {
        let h = match architecture {
            Architecture::Linear => 0,
            Architecture::Mlp1 => h,
        };
        Self {
            architecture,
            d,
            h,
            weights: vec![0.0; n_weights(architecture, d, h)],
            schema_version: FEATURE_SCHEMA_VERSION,
            init_seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn validate(&self) -> Result<(), PrmError> {
        let want = n_weights(self.architecture, self.d, self.h);
        if self.weights.len() != want {
            return Err(PrmError::Checkpoint(format!(
                "{} weights for {:?} d={} h={}, expected {want}",
                self.weights.len(),
                self.architecture,
                self.d,
                self.h
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(PrmError::Checkpoint("non-finite weight".into()));
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), PrmError> {
        if x.len() != self.d {
            return Err(PrmError::Dimension {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Scalar logit; `x` must have length `d`.
    pub(crate) fn logit_unchecked(&self, x: &[f64]) -> f64 {
        let (d, h, w) = (self.d, self.h, &self.weights);
        match self.architecture {
            Architecture::Linear => dot(&w[..d], x) + w[d],
            Architecture::Mlp1 => {
                let (b1, w2, b2) = (&w[d * h..d * h + h], &w[d * h + h..d * h + 2 * h], w[d * h + 2 * h]);
                let mut z = b2;
                for j in 0..h {
                    z += w2[j] * (dot(&w[j * d..(j + 1) * d], x) + b1[j]).tanh();
                }
                z
            }
        }
    }

    /// Logit and its gradient with respect to every weight, written to `dz`.
    pub(crate) fn logit_and_dz(&self, x: &[f64], dz: &mut [f64]) -> f64 {
        let (d, h, w) = (self.d, self.h, &self.weights);
        match self.architecture {
            Architecture::Linear => {
                dz[..d].copy_from_slice(x);
                dz[d] = 1.0;
                dot(&w[..d], x) + w[d]
            }
            Architecture::Mlp1 => {
                let b1 = d * h;
                let w2 = b1 + h;
                let mut z = w[w2 + h];
                for j in 0..h {
                    let t = (dot(&w[j * d..(j + 1) * d], x) + w[b1 + j]).tanh();
                    z += w[w2 + j] * t;
                    let back = w[w2 + j] * (1.0 - t * t);
                    for k in 0..d {
                        dz[j * d + k] = back * x[k];
                    }
                    dz[b1 + j] = back;
                    dz[w2 + j] = t;
                }
                dz[w2 + h] = 1.0;
                z
            }
        }
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64, PrmError> {
        self.check_dim(x)?;
        Ok(self.logit_unchecked(x))
    }

    pub fn score(&self, x: &[f64]) -> Result<f64, PrmError> {
        self.logit(x).map(sigmoid)
    }

    /// `∂z/∂θ` at `x`.
    pub fn logit_grad(&self, x: &[f64]) -> Result<Vec<f64>, PrmError> {
        self.check_dim(x)?;
        let mut dz = vec![0.0; self.len()];
        self.logit_and_dz(x, &mut dz);
        Ok(dz)
    }

    pub fn l2(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    pub fn save(&self, path: &Path) -> Result<(), PrmError> {
        let mut text = serde_json::to_string_pretty(self).expect("params serialize");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PrmError> {
        let text = std::fs::read_to_string(path)?;
        let p: Self = serde_json::from_str(&text).map_err(|e| PrmError::Checkpoint(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss: f64,
    pub grad_theta: Vec<f64>,
    /// `score - label` per sample, in batch order.
    pub per_sample_residuals: Vec<f64>,
}

/// Mean BCE over `(xs[i], ys[i])` plus `λ‖θ‖²`, with its exact gradient.
/// Shapes are the caller's responsibility.
pub fn loss_and_grad_xy(params: &ScorerParams, xs: &[&[f64]], ys: &[f64], weight_decay: f64) -> LossReport {
    let n = xs.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut dz = vec![0.0; params.len()];
    let mut loss = 0.0;
    let mut residuals = Vec::with_capacity(xs.len());
    for (x, &y) in xs.iter().zip(ys) {
        let z = params.logit_and_dz(x, &mut dz);
        loss += bce_logit(z, y);
        let r = sigmoid(z) - y;
        residuals.push(r);
        for (g, d) in grad.iter_mut().zip(&dz) {
            *g += r * d;
        }
    }
    for (g, w) in grad.iter_mut().zip(&params.weights) {
        *g = *g / n + 2.0 * weight_decay * w;
    }
    LossReport {
        loss: loss / n + weight_decay * params.l2(),
        grad_theta: grad,
        per_sample_residuals: residuals,
    }
}

/// Loss value only; same definition as [`loss_and_grad_xy`].
pub fn loss_xy(params: &ScorerParams, xs: &[&[f64]], ys: &[f64], weight_decay: f64) -> f64 {
    let sum: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| bce_logit(params.logit_unchecked(x), y))
        .sum();
    sum / xs.len() as f64 + weight_decay * params.l2()
}

pub fn loss_and_grad(
    params: &ScorerParams,
    batch: &[LabeledPrefix],
    weight_decay: f64,
) -> Result<LossReport, PrmError> {
    if batch.is_empty() {
        return Err(PrmError::EmptyBatch);
    }
    for row in batch {
        params.check_dim(&row.features.values)?;
        if !(0.0..=1.0).contains(&row.label) {
            return Err(PrmError::LabelRange(row.label));
        }
    }
    let xs: Vec<&[f64]> = batch.iter().map(|r| r.features.values.as_slice()).collect();
    let ys: Vec<f64> = batch.iter().map(|r| r.label).collect();
    Ok(loss_and_grad_xy(params, &xs, &ys, weight_decay))
}

/// `θ - α·grad`. Weight decay is already part of the gradient.
pub fn sgd_step(params: &ScorerParams, report: &LossReport, lr: f64) -> ScorerParams {
    let mut next = params.clone();
    for (w, g) in next.weights.iter_mut().zip(&report.grad_theta) {
        *w -= lr * g;
    }
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateRule {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// Stateful parameter update behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(Adam),
}

impl Optimizer {
    pub fn new(rule: UpdateRule, lr: f64, n: usize) -> Self {
        match rule {
            UpdateRule::Sgd => Self::Sgd { lr },
            UpdateRule::Adam => Self::Adam(Adam::new(lr, n)),
        }
    }

    pub fn step(&mut self, params: &ScorerParams, report: &LossReport) -> ScorerParams {
        match self {
            Self::Sgd { lr } => sgd_step(params, report, *lr),
            Self::Adam(a) => {
                a.t += 1;
                let c1 = 1.0 - a.beta1.powi(a.t);
                let c2 = 1.0 - a.beta2.powi(a.t);
                let mut next = params.clone();
                for (i, (w, g)) in next.weights.iter_mut().zip(&report.grad_theta).enumerate() {
                    a.m[i] = a.beta1 * a.m[i] + (1.0 - a.beta1) * g;
                    a.v[i] = a.beta2 * a.v[i] + (1.0 - a.beta2) * g * g;
                    *w -= a.lr * (a.m[i] / c1) / ((a.v[i] / c2).sqrt() + a.eps);
                }
                next
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn rand_instance(arch: Architecture, d: usize, n: usize, seed: u64) -> (ScorerParams, Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ScorerParams::zeros(arch, d, 5);
        for w in &mut p.weights {
            *w = rng.sample::<f64, _>(StandardNormal) * 0.5;
        }
        let xs = (0..n)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let ys = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
        (p, xs, ys)
    }

    #[test]
    fn sigmoid_and_softplus_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert_eq!(softplus(-800.0), 0.0);
        assert_eq!(softplus(800.0), 800.0);
        assert!((bce_logit(0.0, 1.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_score_half() {
        for arch in [Architecture::Linear, Architecture::Mlp1] {
            let p = ScorerParams::zeros(arch, 4, 3);
            assert_eq!(p.score(&[1.0, -2.0, 3.0, 0.5]).unwrap(), 0.5);
        }
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let p = ScorerParams::zeros(Architecture::Linear, 4, 0);
        assert!(matches!(p.score(&[1.0]), Err(PrmError::Dimension { expected: 4, got: 1 })));
    }

    #[test]
    fn init_layout() {
        let p = ScorerParams::init(Architecture::Mlp1, 3, 2, 9);
        assert_eq!(p.len(), 3 * 2 + 2 + 2 + 1);
        assert!(p.weights[6..8].iter().all(|&b| b == 0.0));
        assert_eq!(p.weights[10], 0.0);
        assert!(p.weights[..6].iter().chain(&p.weights[8..10]).all(|w| w.abs() < 0.1 && *w != 0.0));
        assert_eq!(p, ScorerParams::init(Architecture::Mlp1, 3, 2, 9));
        let l = ScorerParams::init(Architecture::Linear, 3, 16, 9);
        assert_eq!((l.len(), l.h, l.weights[3]), (4, 0, 0.0));
    }

    #[test]
    fn linear_zero_input_grad_only_on_bias() {
        let (p, _, _) = rand_instance(Architecture::Linear, 4, 1, 3);
        let x = [0.0; 4];
        let r = loss_and_grad_xy(&p, &[&x], &[1.0], 0.0);
        assert!(r.grad_theta[..4].iter().all(|&g| g == 0.0));
        assert_eq!(r.grad_theta[4], r.per_sample_residuals[0]);
    }

    #[test]
    fn exact_fit_is_stationary() {
        let (p, xs, _) = rand_instance(Architecture::Mlp1, 3, 4, 5);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let ys: Vec<f64> = refs.iter().map(|x| p.score(x).unwrap()).collect();
        let r = loss_and_grad_xy(&p, &refs, &ys, 0.0);
        assert!(r.grad_theta.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn sgd_identities_and_descent() {
        let (p, xs, ys) = rand_instance(Architecture::Linear, 8, 8, 1);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let r = loss_and_grad_xy(&p, &refs, &ys, 1e-2);
        assert_eq!(sgd_step(&p, &r, 0.0), p);
        let zero = LossReport {
            grad_theta: vec![0.0; p.len()],
            ..r.clone()
        };
        assert_eq!(sgd_step(&p, &zero, 0.5), p);
        let next = sgd_step(&p, &r, 1e-3);
        assert!(loss_xy(&next, &refs, &ys, 1e-2) < r.loss);
    }

    #[test]
    fn adam_descends() {
        let (p, xs, ys) = rand_instance(Architecture::Mlp1, 4, 16, 2);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let mut opt = Optimizer::new(UpdateRule::Adam, 1e-2, p.len());
        let start = loss_xy(&p, &refs, &ys, 0.0);
        let mut q = p;
        for _ in 0..50 {
            let r = loss_and_grad_xy(&q, &refs, &ys, 0.0);
            q = opt.step(&q, &r);
        }
        assert!(loss_xy(&q, &refs, &ys, 0.0) < start);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        let p = ScorerParams::init(Architecture::Mlp1, 5, 4, 77);
        p.save(&path).unwrap();
        assert_eq!(ScorerParams::load(&path).unwrap(), p);
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        for key in ["architecture", "d", "h", "weights", "schema_version", "init_seed"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["architecture"], "mlp1");
        std::fs::write(&path, r#"{"architecture":"linear","d":3,"h":0,"weights":[1,2],"schema_version":1,"init_seed":0}"#).unwrap();
        assert!(ScorerParams::load(&path).is_err());
    }
}
