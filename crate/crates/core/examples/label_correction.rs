//! Corrects flipped labels on the planted synthetic instance.
//!
//! cargo run --example label_correction -- [inner_lr meta_lr iterations]

use cofprm::labeler::{make_synthetic, SyntheticSpec};
use cofprm::meta::{correct, mae, meta_accuracy, train_plain, MetaConfig};
use cofprm::prm::{Architecture, ScorerParams, UpdateRule};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let cfg = match args[..] {
        [a, b, t] => MetaConfig {
            inner_lr: a,
            meta_lr: b,
            iterations: t as usize,
            seed: 7,
            ..MetaConfig::default()
        },
        _ => MetaConfig {
            inner_lr: 0.5,
            meta_lr: 5.0,
            iterations: 2000,
            seed: 7,
            ..MetaConfig::default()
        },
    };
    let spec = SyntheticSpec::canonical();
    let s = make_synthetic(&spec)?;
    let init = ScorerParams::init(Architecture::Linear, spec.d, 0, spec.seed);

    let (plain, _) = train_plain(&s.bundle, &init, &cfg, UpdateRule::Sgd)?;
    let trace = correct(&s.bundle, &init, &cfg)?;
    let y0: Vec<f64> = s.bundle.train.iter().map(|r| r.label).collect();

    for r in trace.records.iter().step_by((cfg.iterations / 10).max(1)) {
        println!("iter {:>5} train {:.4} meta {:.4} |dy| {:.2e}", r.iteration, r.train_loss, r.meta_loss, r.mean_abs_delta_y);
    }
    println!("label MAE {:.4} -> {:.4}", mae(&y0, &s.truth), mae(&trace.labels, &s.truth));
    println!(
        "meta accuracy: plain {:.3}, corrected {:.3}",
        meta_accuracy(&plain, &s.bundle.meta),
        meta_accuracy(&trace.params, &s.bundle.meta)
    );
    Ok(())
}
