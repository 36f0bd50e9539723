mod common;

use cofprm::meta::{hypergrad_labels, inner_step};
use cofprm::prm::{loss_and_grad_xy, Architecture, ScorerParams};
use common::*;

fn loss_grad_error(arch: Architecture, seed: u64) -> f64 {
    let inst = random_instance(arch, seed);
    let xs = Instance::refs(&inst.xs);
    let analytic = loss_and_grad_xy(&inst.params, &xs, &inst.ys, inst.lambda);
    let oracle = oracle_loss(&inst.params, &inst.xs, &inst.ys, inst.lambda);
    assert!((analytic.loss - oracle).abs() <= 1e-10 * oracle.abs().max(1.0));
    let fd = central_diff(&inst.params.weights, 1e-5, |w| {
        let mut p = inst.params.clone();
        p.weights.copy_from_slice(w);
        oracle_loss(&p, &inst.xs, &inst.ys, inst.lambda)
    });
    rel_err(&analytic.grad_theta, &fd)
}

#[test]
fn loss_gradient_matches_finite_differences_linear() {
    for seed in 0..100 {
        let e = loss_grad_error(Architecture::Linear, seed);
        assert!(e <= 1e-6, "seed {seed}: {e:e}");
    }
}

#[test]
fn loss_gradient_matches_finite_differences_mlp() {
    for seed in 0..100 {
        let e = loss_grad_error(Architecture::Mlp1, 1000 + seed);
        assert!(e <= 1e-6, "seed {seed}: {e:e}");
    }
}

fn meta_after_step(params: &ScorerParams, inst: &Instance, ys: &[f64]) -> f64 {
    let xs = Instance::refs(&inst.xs);
    let (stepped, _) = inner_step(params, &xs, ys, inst.alpha, inst.lambda);
    let m: f64 = inst
        .meta_xs
        .iter()
        .zip(&inst.meta_ys)
        .map(|(x, &y)| oracle_bce(oracle_logit(&stepped, x), y))
        .sum();
    m / inst.meta_xs.len() as f64
}

#[test]
fn label_hypergradient_matches_finite_differences() {
    for seed in 0..50 {
        let arch = if seed % 2 == 0 { Architecture::Linear } else { Architecture::Mlp1 };
        let inst = random_instance(arch, 5000 + seed);
        let g = hypergrad_labels(
            &inst.params,
            &Instance::refs(&inst.xs),
            &inst.ys,
            &Instance::refs(&inst.meta_xs),
            &inst.meta_ys,
            inst.alpha,
            inst.lambda,
        );
        let fd = central_diff(&inst.ys, 1e-4, |y| meta_after_step(&inst.params, &inst, y));
        let e = rel_err(&g, &fd);
        assert!(e <= 1e-4, "seed {seed}: {e:e}");
    }
}

#[test]
fn hypergradient_vanishes_without_inner_step() {
    let inst = random_instance(Architecture::Linear, 3);
    let g = hypergrad_labels(
        &inst.params,
        &Instance::refs(&inst.xs),
        &inst.ys,
        &Instance::refs(&inst.meta_xs),
        &inst.meta_ys,
        0.0,
        inst.lambda,
    );
    assert!(g.iter().all(|v| *v == 0.0));
}
