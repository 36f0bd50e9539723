//! Samples trajectories from the stub policy and builds an MC-labeled bundle.

use cofprm::corpus::{mini_corpus, Trajectory, TrajectoryStore};
use cofprm::judge::{CachedVerifier, Judge, Limits};
use cofprm::labeler::{build_bundle, BundleOptions, McOptions};
use cofprm::policy::{generate_candidates, GenerationOptions, StubPolicy, StubSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let problems = mini_corpus();
    let stub = StubPolicy::new(StubSpec::mini_corpus())?;
    let mut trajectories = Vec::new();
    for p in problems.iter().take(3) {
        let opts = GenerationOptions {
            seed_base: 100,
            ..GenerationOptions::default()
        };
        for (i, src) in generate_candidates(p, 3, &stub, &opts)?.into_iter().enumerate() {
            trajectories.push(Trajectory::new(format!("{}/t{i}", p.id), &p.id, src));
        }
    }
    let store = TrajectoryStore::from_trajectories(trajectories)?;
    let verifier = CachedVerifier::new(Judge::from_env(Limits::default(), 8)?);
    let opts = BundleOptions {
        mc: McOptions {
            k: 16,
            seed: 1,
            ..McOptions::default()
        },
        binarize: None,
    };
    let (bundle, counts) = build_bundle(&store, &problems, &stub, &verifier, &opts)?;
    println!("{counts:?}");
    for row in &bundle.train {
        println!("{:<22} step {} mc label {:.3}", row.trajectory_id, row.step_index, row.label);
    }
    for row in &bundle.meta {
        println!("{:<22} final   unit test {}", row.trajectory_id, row.label);
    }
    Ok(())
}
