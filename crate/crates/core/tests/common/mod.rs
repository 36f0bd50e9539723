#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cofprm::prm::{Architecture, ScorerParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/cof")
}

/// Forward pass written out from the documented weight layout.
pub fn oracle_logit(p: &ScorerParams, x: &[f64]) -> f64 {
    let (d, h, w) = (p.d, p.h, &p.weights);
    match p.architecture {
        Architecture::Linear => (0..d).map(|k| w[k] * x[k]).sum::<f64>() + w[d],
        Architecture::Mlp1 => {
            let mut z = w[d * h + 2 * h];
            for j in 0..h {
                let mut a = w[d * h + j];
                for k in 0..d {
                    a += w[j * d + k] * x[k];
                }
                z += w[d * h + h + j] * a.tanh();
            }
            z
        }
    }
}

/// Cross-entropy in its textbook form.
pub fn oracle_bce(z: f64, y: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
}

pub fn oracle_loss(p: &ScorerParams, xs: &[Vec<f64>], ys: &[f64], lambda: f64) -> f64 {
    let data: f64 = xs.iter().zip(ys).map(|(x, &y)| oracle_bce(oracle_logit(p, x), y)).sum();
    data / xs.len() as f64 + lambda * p.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Central difference of `f` along every coordinate of `at`.
pub fn central_diff(at: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut v = at.to_vec();
    (0..at.len())
        .map(|i| {
            v[i] = at[i] + h;
            let up = f(&v);
            v[i] = at[i] - h;
            let down = f(&v);
            v[i] = at[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub struct Instance {
    pub params: ScorerParams,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
    pub meta_xs: Vec<Vec<f64>>,
    pub meta_ys: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
}

impl Instance {
    pub fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(Vec::as_slice).collect()
    }
}

pub fn random_instance(arch: Architecture, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.gen_range(1..=12);
    let h = rng.gen_range(1..=8);
    let mut params = ScorerParams::zeros(arch, d, h);
    for w in &mut params.weights {
        *w = 0.5 * rng.sample::<f64, _>(StandardNormal);
    }
    let rows = |n: usize, rng: &mut ChaCha8Rng| -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs = (0..n)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let ys = (0..n).map(|_| rng.gen_range(0.1..0.9)).collect();
        (xs, ys)
    };
    let n = rng.gen_range(1..=16);
    let (xs, ys) = rows(n, &mut rng);
    let m = rng.gen_range(1..=16);
    let (meta_xs, meta_ys) = rows(m, &mut rng);
    Instance {
        params,
        xs,
        ys,
        meta_xs,
        meta_ys,
        lambda: rng.gen_range(0.0..0.1),
        alpha: rng.gen_range(0.05..1.0),
    }
}
