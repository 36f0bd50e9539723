//! Best-of-N selection with the step scorer and pass@1 of the selections.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::cof::{decompose, prefix_header, prefixes, PrefixState};
use crate::corpus::{Difficulty, Problem, ProblemStore};
use crate::judge::{JudgeError, Verdict, Verifier};
use crate::prm::{featurize, PrmError, ScorerParams};

#[derive(Debug, thiserror::Error)]
pub enum RankError {
    #[error("no candidates for problem {0}")]
    NoCandidates(String),
    #[error("selected candidate of problem {0} has not been judged")]
    Unjudged(String),
    #[error("result for unknown problem {0}")]
    UnknownProblem(String),
    #[error(transparent)]
    Prm(#[from] PrmError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankMode {
    #[default]
    PrmMean,
    Orm,
}

impl std::str::FromStr for RerankMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "prm_mean" => Ok(Self::PrmMean),
            "orm" => Ok(Self::Orm),
            other => Err(format!("unknown mode {other:?}; expected prm_mean or orm")),
        }
    }
}

/// How step scores combine in prm mode. Only `Mean` is used unless
/// configured otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    Mean,
    Min,
    Product,
}

pub fn aggregate(step_scores: &[f64], how: Aggregator) -> f64 {
    if step_scores.is_empty() {
        return 0.0;
    }
    match how {
        Aggregator::Mean => step_scores.iter().sum::<f64>() / step_scores.len() as f64,
        Aggregator::Min => step_scores.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregator::Product => step_scores.iter().product(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate_index: usize,
    pub step_scores: Vec<f64>,
    pub aggregate: f64,
    pub mode: RerankMode,
    /// Set when prm mode could not split the candidate into steps.
    #[serde(default)]
    pub decomposition_failed: bool,
}

/// The whole candidate as a single prefix state: the final prefix when the
/// candidate decomposes, otherwise the raw source as one step.
fn whole_program(problem: &Problem, source: &str) -> PrefixState {
    match decompose(source) {
        Ok(d) => prefixes(problem, "candidate", &d).pop().expect("at least one step"),
        Err(_) => {
            let header = prefix_header(problem);
            PrefixState {
                problem_id: problem.id.clone(),
                trajectory_id: "candidate".into(),
                step_index: 1,
                total_steps: 1,
                text: format!("{header}{source}"),
                is_final: true,
                code_start: header.len(),
            }
        }
    }
}

pub fn score_candidate(
    params: &ScorerParams,
    problem: &Problem,
    source: &str,
    candidate_index: usize,
    mode: RerankMode,
    how: Aggregator,
) -> Result<CandidateScore, RankError> {
    let mut out = CandidateScore {
        candidate_index,
        step_scores: Vec::new(),
        aggregate: 0.0,
        mode,
        decomposition_failed: false,
    };
    match mode {
        RerankMode::PrmMean => match decompose(source) {
            Ok(d) => {
                for p in prefixes(problem, "candidate", &d) {
                    out.step_scores.push(params.score(&featurize(&p, problem).values)?);
                }
                out.aggregate = aggregate(&out.step_scores, how);
            }
            Err(e) => {
                log::info!("{} candidate {candidate_index} scored 0: {e}", problem.id);
                out.decomposition_failed = true;
            }
        },
        RerankMode::Orm => {
            if source.trim().is_empty() {
                out.decomposition_failed = true;
            } else {
                let s = params.score(&featurize(&whole_program(problem, source), problem).values)?;
                out.step_scores.push(s);
                out.aggregate = s;
            }
        }
    }
    Ok(out)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.map_or(true, |b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Position in `scores` of the best aggregate; ties go to the lowest
/// `candidate_index`.
pub fn select(scores: &[CandidateScore]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let cur = &scores[b];
                s.aggregate > cur.aggregate
                    || (s.aggregate == cur.aggregate && s.candidate_index < cur.candidate_index)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankResult {
    pub problem_id: String,
    pub scores: Vec<CandidateScore>,
    pub selected_index: usize,
    pub selected_verdict: Option<Verdict>,
}

/// Scores every candidate, selects one, and judges the selection when a
/// verifier is given.
pub fn rerank(
    params: &ScorerParams,
    problem: &Problem,
    candidates: &[String],
    mode: RerankMode,
    how: Aggregator,
    verifier: Option<&dyn Verifier>,
) -> Result<RerankResult, RankError> {
    let scores = candidates
        .iter()
        .enumerate()
        .map(|(i, src)| score_candidate(params, problem, src, i, mode, how))
        .collect::<Result<Vec<_>, _>>()?;
    let pos = select(&scores).ok_or_else(|| RankError::NoCandidates(problem.id.clone()))?;
    let selected_index = scores[pos].candidate_index;
    let selected_verdict = match verifier {
        Some(v) => Some(v.verify(&candidates[selected_index], &problem.tests)?),
        None => None,
    };
    Ok(RerankResult {
        problem_id: problem.id.clone(),
        scores,
        selected_index,
        selected_verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAt1 {
    pub overall: f64,
    /// Per-difficulty pass@1; null when the split has no such problems.
    pub easy: Option<f64>,
    pub medium: Option<f64>,
    pub hard: Option<f64>,
    pub problems: usize,
    pub passed: usize,
}

/// Percentage of problems whose selected candidate passed.
pub fn pass_at_1(results: &[RerankResult], problems: &ProblemStore) -> Result<PassAt1, RankError> {
    let mut by: HashMap<Difficulty, (usize, usize)> = HashMap::new();
    let mut passed = 0;
    for r in results {
        let p = problems
            .get(&r.problem_id)
            .ok_or_else(|| RankError::UnknownProblem(r.problem_id.clone()))?;
        let ok = r
            .selected_verdict
            .as_ref()
            .ok_or_else(|| RankError::Unjudged(r.problem_id.clone()))?
            .passed;
        passed += usize::from(ok);
        let e = by.entry(p.difficulty).or_default();
        e.0 += 1;
        e.1 += usize::from(ok);
    }
    let pct = |(n, k): (usize, usize)| 100.0 * k as f64 / n as f64;
    let part = |d: Difficulty| by.get(&d).map(|&c| pct(c));
    Ok(PassAt1 {
        overall: if results.is_empty() { 0.0 } else { pct((results.len(), passed)) },
        easy: part(Difficulty::Easy),
        medium: part(Difficulty::Medium),
        hard: part(Difficulty::Hard),
        problems: results.len(),
        passed,
    })
}

/// Best-of-N over synthetic candidates whose steps are feature vectors drawn
/// from N(0, I). A candidate's pass probability is the mean of
/// `σ(θ*·x)` over its steps; the scorer picks by mean step score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedBenchmark {
    pub problems: usize,
    pub candidates: usize,
    pub steps: usize,
}

impl Default for PlantedBenchmark {
    fn default() -> Self {
        Self {
            problems: 300,
            candidates: 4,
            steps: 3,
        }
    }
}

impl PlantedBenchmark {
    /// Fraction of problems whose selected candidate passes. The instance
    /// depends only on `theta_star` and `seed`, so scorers compared under
    /// one seed see the same candidates and outcomes.
    pub fn accuracy(&self, params: &ScorerParams, theta_star: &[f64], seed: u64) -> Result<f64, RankError> {
        use rand::{Rng, SeedableRng};
        use rand_distr::StandardNormal;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let mut hits = 0;
        for _ in 0..self.problems {
            let mut aggregates = Vec::with_capacity(self.candidates);
            let mut passes = Vec::with_capacity(self.candidates);
            for _ in 0..self.candidates {
                let mut quality = 0.0;
                let mut scores = Vec::with_capacity(self.steps);
                for _ in 0..self.steps {
                    let x: Vec<f64> = (0..theta_star.len()).map(|_| rng.sample(StandardNormal)).collect();
                    quality += crate::prm::sigmoid(crate::prm::dot(theta_star, &x));
                    scores.push(params.score(&x)?);
                }
                passes.push(rng.gen::<f64>() < quality / self.steps as f64);
                aggregates.push(aggregate(&scores, Aggregator::Mean));
            }
            let pick = argmax_first(&aggregates).ok_or_else(|| RankError::NoCandidates("planted".into()))?;
            hits += usize::from(passes[pick]);
        }
        Ok(hits as f64 / self.problems as f64)
    }
}
