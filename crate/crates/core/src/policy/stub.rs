use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PolicyBackend, PolicyError, PolicyRequest, RequestKind};
use crate::cof::{decompose, Decomposition};
use crate::corpus::ProblemStore;
use crate::judge::Verifier;

const MINI_CORPUS_BANK: &str = include_str!("../../assets/mini_corpus/stub_bank.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateEntry {
    pub correct_sources: Vec<String>,
    pub broken_sources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubSpec {
    pub pass_probability: f64,
    pub template_bank: BTreeMap<String, TemplateEntry>,
}

impl StubSpec {
    /// Template bank of the bundled ten-problem corpus.
    pub fn mini_corpus() -> Self {
        serde_json::from_str(MINI_CORPUS_BANK).expect("bundled stub bank parses")
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PolicyError::Config(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| PolicyError::Config(format!("parsing {}: {e}", path.display())))
    }

    /// Checks that every correct source passes and every broken source fails
    /// its problem's tests. Returns the offending `(problem, kind, index)`.
    pub fn check_against(
        &self,
        problems: &ProblemStore,
        verifier: &dyn Verifier,
    ) -> Result<Vec<(String, &'static str, usize)>, PolicyError> {
        let mut bad = Vec::new();
        for (pid, entry) in &self.template_bank {
            let problem = problems
                .get(pid)
                .ok_or_else(|| PolicyError::Config(format!("bank problem {pid} not in store")))?;
            for (kind, sources, want) in [
                ("correct", &entry.correct_sources, true),
                ("broken", &entry.broken_sources, false),
            ] {
                for (i, src) in sources.iter().enumerate() {
                    let v = verifier
                        .verify(src, &problem.tests)
                        .map_err(|e| PolicyError::Config(e.to_string()))?;
                    if v.passed != want {
                        bad.push((pid.clone(), kind, i));
                    }
                }
            }
        }
        Ok(bad)
    }
}

/// Seeded offline policy. A draw picks a correct template with probability
/// `pass_probability`, otherwise a broken one.
///
/// Prefix completions continue the given prefix with the functions of the
/// drawn template that the prefix does not already define, followed by the
/// template's entry point.
#[derive(Debug)]
pub struct StubPolicy {
    spec: StubSpec,
    parsed: HashMap<String, Decomposition>,
}

impl StubPolicy {
    pub fn new(spec: StubSpec) -> Result<Self, PolicyError> {
        if !(0.0..=1.0).contains(&spec.pass_probability) {
            return Err(PolicyError::Config(format!(
                "pass_probability {} outside [0, 1]",
                spec.pass_probability
            )));
        }
        let mut parsed = HashMap::new();
        for (pid, entry) in &spec.template_bank {
            if entry.correct_sources.is_empty() && entry.broken_sources.is_empty() {
                return Err(PolicyError::Config(format!("problem {pid} has no templates")));
            }
            for src in entry.correct_sources.iter().chain(&entry.broken_sources) {
                let d = decompose(src).map_err(|e| {
                    PolicyError::Config(format!("template for {pid} does not decompose: {e}"))
                })?;
                parsed.insert(src.clone(), d);
            }
        }
        Ok(Self { spec, parsed })
    }

    pub fn spec(&self) -> &StubSpec {
        &self.spec
    }

    fn rng(problem_id: &str, req: &PolicyRequest) -> ChaCha8Rng {
        let mut h = Sha256::new();
        for part in [problem_id, &req.prompt, req.prefix.as_deref().unwrap_or("")] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        h.update([matches!(req.kind, RequestKind::PrefixCompletion) as u8]);
        h.update(req.seed.to_le_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    /// Returns the drawn template and whether it came from the correct list.
    pub fn draw(&self, problem_id: &str, req: &PolicyRequest) -> Result<(&str, bool), PolicyError> {
        let entry = self
            .spec
            .template_bank
            .get(problem_id)
            .ok_or_else(|| PolicyError::Config(format!("stub has no templates for {problem_id}")))?;
        let mut rng = Self::rng(problem_id, req);
        let want_correct = rng.gen::<f64>() < self.spec.pass_probability;
        let (list, correct) = match (want_correct, entry.correct_sources.is_empty(), entry.broken_sources.is_empty()) {
            (true, false, _) | (false, false, true) => (&entry.correct_sources, true),
            _ => (&entry.broken_sources, false),
        };
        let pick = rng.gen_range(0..list.len());
        Ok((list[pick].as_str(), correct))
    }

    fn continue_prefix(&self, prefix: &str, template: &str) -> String {
        let d = &self.parsed[template];
        let defined: HashSet<String> = decompose(prefix)
            .map(|p| p.steps.into_iter().map(|s| s.name).collect())
            .unwrap_or_default();
        let present: HashSet<&str> = prefix.lines().map(str::trim_end).collect();

        let mut out = String::new();
        if !prefix.is_empty() && !prefix.ends_with('\n') {
            out.push('\n');
        }
        for line in d.preamble.lines() {
            let line = line.trim_end();
            if !line.is_empty() && !present.contains(line) {
                out.push_str(line);
                out.push('\n');
            }
        }
        for step in d.steps.iter().filter(|s| !defined.contains(&s.name)) {
            out.push_str(&step.text);
        }
        out.push_str(&d.epilogue);
        out
    }
}

impl PolicyBackend for StubPolicy {
    fn complete(&self, problem_id: &str, req: &PolicyRequest) -> Result<String, PolicyError> {
        let (template, _) = self.draw(problem_id, req)?;
        Ok(match (&req.kind, &req.prefix) {
            (RequestKind::FullSolution, _) => template.to_owned(),
            (RequestKind::PrefixCompletion, Some(prefix)) => self.continue_prefix(prefix, template),
            (RequestKind::PrefixCompletion, None) => {
                return Err(PolicyError::InvalidRequest("missing prefix".into()))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{generate_candidates, sample, GenerationOptions, RetryPolicy};

    fn spec(p: f64) -> StubSpec {
        let mut bank = BTreeMap::new();
        bank.insert(
            "sum".to_owned(),
            TemplateEntry {
                correct_sources: vec![
                    "import sys\n\ndef main():\n    print(add(*map(int, sys.stdin.read().split())))\n\ndef add(a, b):\n    return a + b\n\nmain()\n".into(),
                ],
                broken_sources: vec![
                    "import sys\n\ndef main():\n    print(add(*map(int, sys.stdin.read().split())))\n\ndef add(a, b):\n    return a - b\n\nmain()\n".into(),
                ],
            },
        );
        StubSpec {
            pass_probability: p,
            template_bank: bank,
        }
    }

    fn full(seed: u64) -> PolicyRequest {
        PolicyRequest::full_solution("prompt".into(), 1.0, seed)
    }

    #[test]
    fn certain_pass_probability_draws_correct() {
        let stub = StubPolicy::new(spec(1.0)).unwrap();
        let correct = &stub.spec().template_bank["sum"].correct_sources;
        for seed in 0..20 {
            assert!(correct.contains(&stub.complete("sum", &full(seed)).unwrap()));
        }
    }

    #[test]
    fn same_request_same_output() {
        let stub = StubPolicy::new(spec(0.5)).unwrap();
        for seed in 0..10 {
            assert_eq!(stub.complete("sum", &full(seed)), stub.complete("sum", &full(seed)));
        }
    }

    #[test]
    fn draw_rate_within_binomial_bound() {
        let stub = StubPolicy::new(spec(0.5)).unwrap();
        let hits = (0..1000u64)
            .filter(|&s| stub.draw("sum", &full(s)).unwrap().1)
            .count();
        let rate = hits as f64 / 1000.0;
        assert!((rate - 0.5).abs() <= 3.0 * (0.25f64 / 1000.0).sqrt(), "rate {rate}");
    }

    #[test]
    fn unknown_problem_is_config_error() {
        let stub = StubPolicy::new(spec(0.5)).unwrap();
        assert!(matches!(stub.complete("nope", &full(0)), Err(PolicyError::Config(_))));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(StubPolicy::new(spec(1.5)).is_err());
        let mut s = spec(0.5);
        s.template_bank.get_mut("sum").unwrap().broken_sources.push("print(1)\n".into());
        assert!(StubPolicy::new(s).is_err());
    }

    #[test]
    fn completion_adds_missing_functions_and_entry_point() {
        let stub = StubPolicy::new(spec(1.0)).unwrap();
        let prefix = "import sys\n\ndef main():\n    print(add(*map(int, sys.stdin.read().split())))\n\n";
        let req = PolicyRequest::prefix_completion("prompt".into(), prefix.into(), 1.0, 4);
        let completion = stub.complete("sum", &req).unwrap();
        assert_eq!(completion, "def add(a, b):\n    return a + b\n\nmain()\n");
        let program = format!("{prefix}{completion}");
        assert_eq!(decompose(&program).unwrap().step_names(), ["main", "add"]);
    }

    #[test]
    fn generation_uses_consecutive_seeds() {
        let stub = StubPolicy::new(spec(0.5)).unwrap();
        let problem = crate::corpus::Problem {
            id: "sum".into(),
            statement: "add".into(),
            tests: vec![],
            published_at: "2024-01-01".parse().unwrap(),
            difficulty: Default::default(),
        };
        let opts = GenerationOptions {
            seed_base: 11,
            retry: RetryPolicy::immediate(1),
            ..Default::default()
        };
        let four = generate_candidates(&problem, 4, &stub, &opts).unwrap();
        assert_eq!(four.len(), 4);
        let one = generate_candidates(&problem, 1, &stub, &opts).unwrap();
        let req = PolicyRequest::full_solution(crate::cof::cof_prompt(&problem), opts.temperature, 11);
        assert_eq!(one, [sample(&stub, "sum", &req, &opts.retry).unwrap()]);
        assert_eq!(one[0], four[0]);
    }

    #[test]
    fn bundled_bank_parses_and_decomposes() {
        let stub = StubPolicy::new(StubSpec::mini_corpus()).unwrap();
        assert_eq!(stub.spec().template_bank.len(), 10);
    }
}
