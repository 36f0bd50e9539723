//! Best-of-N on the planted benchmark and on real mini-corpus candidates.

use cofprm::corpus::mini_corpus;
use cofprm::judge::{Judge, Limits};
use cofprm::labeler::{make_synthetic, SyntheticSpec};
use cofprm::meta::{correct, train_plain, MetaConfig};
use cofprm::policy::{generate_candidates, GenerationOptions, StubPolicy, StubSpec};
use cofprm::prm::{Architecture, ScorerParams, UpdateRule, FEATURE_DIM};
use cofprm::rank::{pass_at_1, rerank, Aggregator, PlantedBenchmark, RerankMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec::canonical();
    let s = make_synthetic(&spec)?;
    let init = ScorerParams::init(Architecture::Linear, spec.d, 0, 0);
    let cfg = MetaConfig {
        inner_lr: 0.1,
        meta_lr: 1.0,
        iterations: 2000,
        seed: 0,
        ..MetaConfig::default()
    };
    let (plain, _) = train_plain(&s.bundle, &init, &cfg, UpdateRule::Sgd)?;
    let fixed = correct(&s.bundle, &init, &cfg)?.params;
    let bench = PlantedBenchmark::default();
    println!("planted: uncorrected {:.3}", bench.accuracy(&plain, &spec.theta_star, 0)?);
    println!("planted: corrected   {:.3}", bench.accuracy(&fixed, &spec.theta_star, 0)?);

    // An untrained scorer on real candidates, just to show the plumbing.
    let scorer = ScorerParams::init(Architecture::Linear, FEATURE_DIM, 0, 3);
    let stub = StubPolicy::new(StubSpec::mini_corpus())?;
    let judge = Judge::from_env(Limits::default(), 8)?;
    let problems = mini_corpus();
    let mut results = Vec::new();
    for p in problems.iter() {
        let cands = generate_candidates(p, 4, &stub, &GenerationOptions::default())?;
        let r = rerank(&scorer, p, &cands, RerankMode::PrmMean, Aggregator::Mean, Some(&judge))?;
        let aggs: Vec<String> = r.scores.iter().map(|c| format!("{:.3}", c.aggregate)).collect();
        println!("{:<16} picks {} of [{}]", p.id, r.selected_index, aggs.join(", "));
        results.push(r);
    }
    println!("{:?}", pass_at_1(&results, &problems)?);
    Ok(())
}
