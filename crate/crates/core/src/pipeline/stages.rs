use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::{derive_seed, Ctx, ParamsSource, PipelineError, Stage};
use crate::cof::{self, extract_docstring};
use crate::corpus::{self, LabelRecord, ProblemFormat, ProblemStore, Trajectory, TrajectoryStore};
use crate::judge::{CachedVerifier, Judge, Verifier};
use crate::labeler::{self, BundleOptions, DatasetBundle, McOptions};
use crate::meta::{self, MetaConfig};
use crate::policy::{build_backend, generate_candidates, GenerationOptions, RetryPolicy};
use crate::prm::ScorerParams;
use crate::rank::{self, RerankMode};

/// Explicit inputs for the rerank stage; unset fields fall back to the run's
/// own artifacts.
#[derive(Debug, Clone, Default)]
pub struct RerankOverrides {
    pub problems: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub mode: Option<RerankMode>,
    /// Judge selections. The stage judges by default.
    pub judge: Option<bool>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| PipelineError::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), PipelineError> {
    let mut out = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut out, &row).expect("row serializes");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| PipelineError::io(path, e))
}

fn load_problems(ctx: &mut Ctx, what: &str, path: &Path) -> Result<ProblemStore, PipelineError> {
    let path = ctx.input(what, path)?;
    corpus::load_problems(&path, ProblemFormat::Jsonl).map_err(PipelineError::stage)
}

fn make_judge(ctx: &Ctx) -> Result<CachedVerifier<Judge>, PipelineError> {
    let j = &ctx.cfg.judge;
    let judge = match &j.interpreter {
        Some(name) => Judge::with_interpreter(name, j.limits(), j.workers),
        None => Judge::from_env(j.limits(), j.workers),
    }
    .map_err(PipelineError::stage)?;
    Ok(CachedVerifier::new(judge))
}

fn trajectories_path(ctx: &Ctx) -> PathBuf {
    ctx.cfg
        .paths
        .trajectories
        .clone()
        .unwrap_or_else(|| ctx.stage_path(Stage::Generate, "trajectories.jsonl"))
}

/// Bundle directory for train/correct: the configured one, else the output of
/// the latest label or synth stage of this run.
fn bundle_dir(ctx: &Ctx) -> PathBuf {
    if let Some(p) = &ctx.cfg.paths.bundle {
        return p.clone();
    }
    let stage = match ctx.manifest.latest_of(&["label", "synth"]).map(|e| e.stage.as_str()) {
        Some("synth") => Stage::Synth,
        _ => Stage::Label,
    };
    ctx.run_dir.join(stage.name())
}

fn load_bundle(ctx: &mut Ctx) -> Result<(PathBuf, DatasetBundle), PipelineError> {
    let dir = bundle_dir(ctx);
    for f in [DatasetBundle::TRAIN_FILE, DatasetBundle::META_FILE, DatasetBundle::FEATURES_FILE] {
        ctx.input("bundle", &dir.join(f))?;
    }
    if dir.join(DatasetBundle::TRUTH_FILE).exists() {
        ctx.input("bundle", &dir.join(DatasetBundle::TRUTH_FILE))?;
    }
    let bundle = DatasetBundle::load(&dir).map_err(PipelineError::stage)?;
    Ok((dir, bundle))
}

fn init_params(ctx: &Ctx, d: usize) -> ScorerParams {
    let p = &ctx.cfg.prm;
    ScorerParams::init(p.architecture, d, p.hidden, derive_seed(ctx.cfg.seed, "prm-init"))
}

pub(super) fn ingest(ctx: &mut Ctx) -> Result<serde_json::Value, PipelineError> {
    let store = match ctx.cfg.paths.problems.clone() {
        Some(path) => load_problems(ctx, "problems", &path)?,
        None => {
            ctx.builtin_input("mini_corpus/problems.jsonl", corpus::MINI_CORPUS_PROBLEMS.as_bytes());
            corpus::mini_corpus()
        }
    };
    let (train, test) = corpus::temporal_split(&store, &ctx.cfg.split);
    let dir = ctx.stage_dir()?;
    for (name, s) in [("problems.jsonl", &store), ("train_problems.jsonl", &train), ("test_problems.jsonl", &test)] {
        let path = dir.join(name);
        corpus::save_problems(&path, s).map_err(PipelineError::stage)?;
        ctx.output(&path)?;
    }
    let summary = json!({
        "problems": store.len(),
        "train": train.len(),
        "test": test.len(),
        "excluded": store.len() - train.len() - test.len(),
        "train_before": ctx.cfg.split.train_before.to_string(),
        "test_after": ctx.cfg.split.test_after.to_string(),
    });
    let path = dir.join("split.json");
    write_json(&path, &summary)?;
    ctx.output(&path)?;
    Ok(summary)
}

pub(super) fn generate(ctx: &mut Ctx) -> Result<serde_json::Value, PipelineError> {
    let train = load_problems(ctx, "train problems", &ctx.stage_path(Stage::Ingest, "train_problems.jsonl"))?;
    let test = load_problems(ctx, "test problems", &ctx.stage_path(Stage::Ingest, "test_problems.jsonl"))?;
    let backend = build_backend(&ctx.cfg.policy).map_err(PipelineError::stage)?;
    let cfg = ctx.cfg;

    let draw = |store: &ProblemStore, n: usize, tag: &str, letter: char| -> Result<Vec<Trajectory>, PipelineError> {
        let mut out = Vec::new();
        for p in store.iter() {
            let opts = GenerationOptions {
                seed_base: derive_seed(cfg.seed, &format!("{tag}/{}", p.id)),
                temperature: cfg.policy.candidate_temperature,
                retry: RetryPolicy::default(),
            };
            let sources = generate_candidates(p, n, backend.as_ref(), &opts).map_err(PipelineError::stage)?;
            out.extend(
                sources
                    .into_iter()
                    .enumerate()
                    .map(|(i, s)| Trajectory::new(format!("{}/{letter}{i}", p.id), &p.id, s)),
            );
        }
        Ok(out)
    };
    let trajectories = draw(&train, cfg.generate.trajectories_per_problem, "trajectories", 't')?;
    let candidates = draw(&test, cfg.rerank.n_candidates, "candidates", 'c')?;

    let dir = ctx.stage_dir()?;
    let summary = json!({ "trajectories": trajectories.len(), "candidates": candidates.len() });
    for (name, items) in [("trajectories.jsonl", trajectories), ("candidates.jsonl", candidates)] {
        let path = dir.join(name);
        let store = TrajectoryStore::from_trajectories(items).map_err(PipelineError::stage)?;
        corpus::save_trajectories(&path, &store).map_err(PipelineError::stage)?;
        ctx.output(&path)?;
    }
    Ok(summary)
}

#[derive(Serialize)]
struct DecompositionRow<'a> {
    trajectory_id: &'a str,
    problem_id: &'a str,
    error: Option<String>,
    steps: Vec<StepRow>,
}

#[derive(Serialize)]
struct StepRow {
    index: usize,
    name: String,
    line_span: (usize, usize),
    documented: bool,
}

pub(super) fn decompose(ctx: &mut Ctx) -> Result<serde_json::Value, PipelineError> {
    let path = ctx.input("trajectories", &trajectories_path(ctx))?;
    let store = corpus::load_trajectories(&path).map_err(PipelineError::stage)?;
    let mut rows = Vec::new();
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    let mut failed = 0;
    for t in store.iter() {
        let (error, steps) = match cof::decompose(&t.source) {
            Ok(d) => {
                *histogram.entry(d.steps.len()).or_default() += 1;
                let steps = d
                    .steps
                    .iter()
                    .map(|s| StepRow {
                        index: s.index,
                        name: s.name.clone(),
                        line_span: s.line_span,
                        documented: extract_docstring(s).is_some(),
                    })
                    .collect();
                (None, steps)
            }
            Err(e) => {
                failed += 1;
                (Some(e.to_string()), Vec::new())
            }
        };
        rows.push(DecompositionRow {
            trajectory_id: &t.id,
            problem_id: &t.problem_id,
            error,
            steps,
        });
    }
    let dir = ctx.stage_dir()?;
    let out = dir.join("decompositions.jsonl");
    write_jsonl(&out, &rows)?;
    ctx.output(&out)?;
    Ok(json!({
        "trajectories": rows.len(),
        "failed": failed,
        "steps_histogram": histogram,
    }))
}

pub(super) fn label(ctx: &mut Ctx) -> Result<serde_json::Value, PipelineError> {
    let problems_path = ctx
        .problems
        .clone()
        .unwrap_or_else(|| ctx.stage_path(Stage::Ingest, "problems.jsonl"));
    let problems = load_problems(ctx, "problems", &problems_path)?;
    let path = ctx.input("trajectories", &trajectories_path(ctx))?;
    let trajectories = corpus::load_trajectories(&path).map_err(PipelineError::stage)?;
    let backend = build_backend(&ctx.cfg.policy).map_err(PipelineError::stage)?;
    let judge = make_judge(ctx)?;
    let opts = BundleOptions {
        mc: McOptions {
            k: ctx.cfg.label.k,
            seed: derive_seed(ctx.cfg.seed, "mc"),
            temperature: ctx.cfg.policy.mc_temperature,
            retry: RetryPolicy::default(),
        },
        binarize: ctx.cfg.label.binarize,
    };
    let (bundle, counts) =
        labeler::build_bundle(&trajectories, &problems, backend.as_ref(), &judge, &opts).map_err(PipelineError::stage)?;
    let dir = ctx.stage_dir()?;
    bundle.save(&dir).map_err(PipelineError::stage)?;
    for f in [DatasetBundle::TRAIN_FILE, DatasetBundle::META_FILE, DatasetBundle::FEATURES_FILE] {
        ctx.output(&dir.join(f))?;
    }
    let summary = serde_json::to_value(counts).expect("counts serialize");
    let path = dir.join("counts.json");
    write_json(&path, &summary)?;
    ctx.output(&path)?;
    Ok(summary)
}

fn bundle_d(bundle: &DatasetBundle) -> Result<usize, PipelineError> {
    bundle.dim().ok_or_else(|| PipelineError::Stage("bundle is empty".into()))
}

pub(super) fn train(ctx: &mut Ctx) -> Result<serde_json::Value, PipelineError> {
    let (bundle_path, bundle) = load_bundle(ctx)?;
    let init = init_params(ctx, bundle_d(&bundle)?);
    let t = &ctx.cfg.train;
    let cfg = MetaConfig {
        inner_lr: t.lr,
        iterations: t.iterations,
        ..ctx.cfg.meta
    };
    let (params, losses) = meta::train_plain(&bundle, &init, &cfg, t.rule).map_err(PipelineError::stage)?;
    let dir = ctx.stage_dir()?;
    let ppath = dir.join("params.json");
    params.save(&ppath).map_err(PipelineError::stage)?;
    ctx.output(&ppath)?;
    let tpath = dir.join("trace.jsonl");
    write_jsonl(
        &tpath,
        losses.iter().enumerate().map(|(i, l)| json!({ "iteration": i + 1, "train_loss": l })),
    )?;
    ctx.output(&tpath)?;
    Ok(json!({
        "bundle": ctx.rel(&bundle_path),
        "rule": t.rule,
        "iterations": t.iterations,
        "final_train_loss": losses.last(),
        "meta_accuracy": if bundle.meta.is_empty() { None } else { Some(meta::meta_accuracy(&params, &bundle.meta)) },
    }))
}

pub(super) fn correct(ctx: &mut Ctx) -> Result<serde_json::Value, PipelineError> {
    let (bundle_path, bundle) = load_bundle(ctx)?;
    let init = init_params(ctx, bundle_d(&bundle)?);
    let trace = meta::correct(&bundle, &init, &ctx.cfg.meta).map_err(PipelineError::stage)?;
    let corrected = trace.apply(&bundle);
    let dir = ctx.stage_dir()?;

    let lpath = dir.join("corrected_labels.jsonl");
    let rows: Vec<LabelRecord> = corrected.train.iter().chain(&corrected.meta).map(|r| r.record()).collect();
    corpus::save_labels_unchecked(&lpath, &rows).map_err(PipelineError::stage)?;
    ctx.output(&lpath)?;
    let ppath = dir.join("params.json");
    trace.params.save(&ppath).map_err(PipelineError::stage)?;
    ctx.output(&ppath)?;
    let tpath = dir.join("trace.jsonl");
    write_jsonl(&tpath, &trace.records)?;
    ctx.output(&tpath)?;

    let initial: Vec<f64> = bundle.train.iter().map(|r| r.label).collect();
    let mut summary = json!({
        "bundle": ctx.rel(&bundle_path),
        "info": trace.info,
        "final_meta_loss": trace.records.last().map(|r| r.meta_loss),
        "mean_abs_label_change": meta::mae(&initial, &trace.labels),
        "meta_accuracy": meta::meta_accuracy(&trace.params, &bundle.meta),
    });
    if let Some(truth) = labeler::load_truth(&bundle_path, &bundle.train).map_err(PipelineError::stage)? {
        let before = meta::mae(&initial, &truth);
        let after = meta::mae(&trace.labels, &truth);
        summary["label_mae"] = json!({ "initial": before, "final": after, "ratio": after / before });
    }
    let spath = dir.join("summary.json");
    write_json(&spath, &summary)?;
    ctx.output(&spath)?;
    Ok(summary)
}

pub(super) fn rerank(ctx: &mut Ctx, over: &RerankOverrides) -> Result<serde_json::Value, PipelineError> {
    let cfg = ctx.cfg;
    let problems_path = over
        .problems
        .clone()
        .or_else(|| ctx.problems.clone())
        .unwrap_or_else(|| ctx.stage_path(Stage::Ingest, "test_problems.jsonl"));
    let candidates_path = over
        .candidates
        .clone()
        .unwrap_or_else(|| ctx.stage_path(Stage::Generate, "candidates.jsonl"));
    let params_path = over.params.clone().unwrap_or_else(|| {
        let stage = match cfg.rerank.params_from {
            ParamsSource::Correct => Stage::Correct,
            ParamsSource::Train => Stage::Train,
        };
        ctx.stage_path(stage, "params.json")
    });
    let params_path = ctx.input("params.json", &params_path)?;
    let params = ScorerParams::load(&params_path).map_err(PipelineError::stage)?;
    let problems = load_problems(ctx, "problems", &problems_path)?;
    let candidates_path = ctx.input("candidates", &candidates_path)?;
    let candidates = corpus::load_trajectories(&candidates_path).map_err(PipelineError::stage)?;

    let mut grouped: Vec<(String, Vec<String>)> = Vec::new();
    for c in candidates.iter() {
        match grouped.iter_mut().find(|(pid, _)| *pid == c.problem_id) {
            Some((_, v)) => v.push(c.source.clone()),
            None => grouped.push((c.problem_id.clone(), vec![c.source.clone()])),
        }
    }
    let mode = over.mode.unwrap_or(cfg.rerank.mode);
    let judge = if over.judge.unwrap_or(true) { Some(make_judge(ctx)?) } else { None };
    let mut results = Vec::new();
    for (pid, sources) in &grouped {
        let problem = problems
            .get(pid)
            .ok_or_else(|| PipelineError::Stage(format!("candidates refer to unknown problem {pid}")))?;
        let verifier = judge.as_ref().map(|j| j as &dyn Verifier);
        let mut r = rank::rerank(&params, problem, sources, mode, cfg.rerank.aggregator, verifier)
            .map_err(PipelineError::stage)?;
        r.selected_verdict = r.selected_verdict.map(|v| v.without_timing());
        results.push(r);
    }

    let dir = ctx.stage_dir()?;
    let rpath = dir.join("results.jsonl");
    write_jsonl(&rpath, &results)?;
    ctx.output(&rpath)?;
    let mut summary = json!({
        "mode": mode,
        "aggregator": cfg.rerank.aggregator,
        "params": ctx.rel(&params_path),
        "problems": results.len(),
    });
    if judge.is_some() {
        let pass = rank::pass_at_1(&results, &problems).map_err(PipelineError::stage)?;
        for (k, v) in serde_json::to_value(pass).expect("serializes").as_object().expect("object") {
            summary[k] = v.clone();
        }
    }
    let spath = dir.join("summary.json");
    write_json(&spath, &summary)?;
    ctx.output(&spath)?;
    Ok(summary)
}

pub(super) fn eval(ctx: &mut Ctx) -> Result<serde_json::Value, PipelineError> {
    let mut summary = serde_json::Map::new();
    for stage in [Stage::Train, Stage::Correct, Stage::Rerank] {
        let file = match stage {
            Stage::Train => "params.json",
            _ => "summary.json",
        };
        let path = ctx.stage_path(stage, file);
        if !path.is_file() {
            continue;
        }
        ctx.input(stage.name(), &path)?;
        let entry = match stage {
            Stage::Train => ctx
                .manifest
                .latest_of(&["train"])
                .map(|e| e.summary.clone())
                .unwrap_or(serde_json::Value::Null),
            _ => {
                let text = fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
                serde_json::from_str(&text).map_err(|e| PipelineError::io(&path, e))?
            }
        };
        summary.insert(stage.name().into(), entry);
    }
    if summary.is_empty() {
        return Err(PipelineError::MissingInput {
            what: "params.json".into(),
            path: ctx.stage_path(Stage::Correct, "params.json"),
        });
    }
    let out = serde_json::Value::Object(summary);
    let dir = ctx.stage_dir()?;
    let path = dir.join("summary.json");
    write_json(&path, &out)?;
    ctx.output(&path)?;
    Ok(out)
}

pub(super) fn synth(ctx: &mut Ctx) -> Result<serde_json::Value, PipelineError> {
    let spec = ctx.cfg.synth.spec(ctx.cfg.seed);
    let s = labeler::make_synthetic(&spec).map_err(PipelineError::stage)?;
    let dir = ctx.stage_dir()?;
    s.bundle.save(&dir).map_err(PipelineError::stage)?;
    labeler::save_truth(&dir, &s.bundle.train, &s.truth).map_err(PipelineError::stage)?;
    let spath = dir.join("spec.json");
    write_json(&spath, &spec)?;
    for f in [
        DatasetBundle::TRAIN_FILE,
        DatasetBundle::META_FILE,
        DatasetBundle::FEATURES_FILE,
        DatasetBundle::TRUTH_FILE,
        "spec.json",
    ] {
        ctx.output(&dir.join(f))?;
    }
    let initial: Vec<f64> = s.bundle.train.iter().map(|r| r.label).collect();
    Ok(json!({
        "train_rows": s.bundle.train.len(),
        "meta_rows": s.bundle.meta.len(),
        "initial_label_mae": meta::mae(&initial, &s.truth),
    }))
}
