use cofprm::cof::decompose;
use cofprm::labeler::{DatasetBundle, LabeledPrefix};
use cofprm::prm::{Architecture, FeatureVector, ScorerParams};
use cofprm::rank::{aggregate, argmax_first, select, Aggregator, CandidateScore, RerankMode};
use proptest::prelude::*;
use proptest::sample::subsequence;

fn candidates(aggs: &[f64]) -> Vec<CandidateScore> {
    aggs.iter()
        .enumerate()
        .map(|(i, &a)| CandidateScore {
            candidate_index: i,
            step_scores: vec![a],
            aggregate: a,
            mode: RerankMode::PrmMean,
            decomposition_failed: false,
        })
        .collect()
}

/// Scores on a coarse grid so ties are common.
fn grid_scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0u32..=8).prop_map(|k| k as f64 / 8.0), 1..10)
}

fn expected_pick(aggs: &[f64]) -> usize {
    let best = aggs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    aggs.iter().position(|&a| a == best).unwrap()
}

proptest! {
    #[test]
    fn selection_ignores_candidate_order(aggs in grid_scores(), perm_seed in any::<u64>()) {
        let scores = candidates(&aggs);
        let mut shuffled = scores.clone();
        let mut s = perm_seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = scores[select(&scores).unwrap()].candidate_index;
        let b = shuffled[select(&shuffled).unwrap()].candidate_index;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ties_go_to_lowest_index(aggs in grid_scores()) {
        let scores = candidates(&aggs);
        prop_assert_eq!(scores[select(&scores).unwrap()].candidate_index, expected_pick(&aggs));
        prop_assert_eq!(argmax_first(&aggs), Some(expected_pick(&aggs)));
    }

    #[test]
    fn monotone_transform_keeps_argmax(aggs in grid_scores()) {
        let before = argmax_first(&aggs);
        for f in [|x: f64| x.exp(), |x: f64| 3.0 * x - 1.0, |x: f64| x.powi(3)] {
            let mapped: Vec<f64> = aggs.iter().map(|&x| f(x)).collect();
            prop_assert_eq!(argmax_first(&mapped), before);
        }
    }

    #[test]
    fn mean_lies_between_min_and_max(steps in prop::collection::vec(0.0f64..1.0, 1..8)) {
        let m = aggregate(&steps, Aggregator::Mean);
        let lo = steps.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = steps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo - 1e-12 <= m && m <= hi + 1e-12);
        prop_assert_eq!(aggregate(&steps, Aggregator::Min), lo);
    }

    #[test]
    fn decomposition_is_a_partition(
        parts in subsequence(vec![
            "import sys\n", "X = 1\n", "# note\n", "@cache\n", "def a():\n    return 1\n",
            "\n", "def b(x):\n    '''doc'''\n    return x\n", "class C:\n    def m(self):\n        pass\n",
            "async def c():\n    pass\n", "s = '''\ndef fake():\n'''\n", "main()\n", "if True:\n    main()\n",
            "def d(\n    y,\n):\n\treturn y\n",
        ], 0..13),
        crlf in any::<bool>(),
    ) {
        let mut source: String = parts.concat();
        if crlf {
            source = source.replace('\n', "\r\n");
        }
        if let Ok(d) = decompose(&source) {
            prop_assert_eq!(d.reconstruct(), source.clone());
            for (i, s) in d.steps.iter().enumerate() {
                prop_assert_eq!(s.index, i + 1);
                prop_assert!(!s.text.is_empty());
            }
        }
    }

    #[test]
    fn params_round_trip(seed in any::<u64>(), d in 1usize..30, h in 1usize..6, mlp in any::<bool>()) {
        let arch = if mlp { Architecture::Mlp1 } else { Architecture::Linear };
        let p = ScorerParams::init(arch, d, h, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        p.save(&path).unwrap();
        prop_assert_eq!(ScorerParams::load(&path).unwrap(), p);
    }

    #[test]
    fn bundle_round_trip(
        train in prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 3), 0.0f64..=1.0), 1..12),
        meta in prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 3), any::<bool>()), 1..6),
    ) {
        let bundle = DatasetBundle {
            train: train.iter().enumerate()
                .map(|(i, (x, y))| LabeledPrefix::mc(format!("t{i}"), 1, FeatureVector::new(x.clone()), *y))
                .collect(),
            meta: meta.iter().enumerate()
                .map(|(i, (x, p))| LabeledPrefix::unit_test(format!("m{i}"), 2, FeatureVector::new(x.clone()), *p))
                .collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        bundle.save(dir.path()).unwrap();
        prop_assert_eq!(DatasetBundle::load(dir.path()).unwrap(), bundle);
    }
}

#[test]
fn mean_of_three_steps() {
    assert!((aggregate(&[0.8, 0.6, 0.7], Aggregator::Mean) - 0.7).abs() <= 1e-12);
}
