use std::path::Path;
use std::process::{Command, Output};

use cofprm::pipeline::{file_digest, unreferenced_files, PipelineConfig, RunManifest};
use cofprm::policy::StubSpec;
use serde_json::Value;

fn cofprm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cofprm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn rerank_before_training_reports_missing_params() {
    let dir = tempfile::tempdir().unwrap();
    let out = cofprm(dir.path(), &["rerank"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "missing_input");
    assert_eq!(err["stage"], "rerank");
    assert!(err["message"].as_str().unwrap().contains("missing params.json"));
}

#[test]
fn synth_correct_eval() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["synth", "correct", "eval"] {
        let out = cofprm(dir.path(), &["--json", cmd]);
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("runs/default/eval/summary.json")).unwrap()).unwrap();
    let mae = &summary["correct"]["label_mae"];
    assert!(mae["final"].as_f64().unwrap() < mae["initial"].as_f64().unwrap());
}

#[test]
fn full_run_manifest_covers_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = cofprm(dir.path(), &["--seed", "3", "--run-id", "r1", "all"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("runs/r1");
    assert!(unreferenced_files(&run).unwrap().is_empty());
    let manifest = RunManifest::load_or_new(&run, "r1").unwrap();
    let stages: Vec<&str> = manifest.entries.iter().map(|e| e.stage.as_str()).collect();
    assert_eq!(stages, ["ingest", "generate", "decompose", "label", "train", "correct", "rerank", "eval"]);
    for e in &manifest.entries {
        assert!(!e.outputs.is_empty(), "{}", e.stage);
        for (rel, digest) in &e.outputs {
            assert_eq!(&file_digest(&run.join(rel)).unwrap(), digest, "{rel}");
        }
    }
    assert!(manifest.config.contains("seed = 3"));
}

#[test]
fn tampered_input_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cofprm(dir.path(), &["synth"]).status.code(), Some(0));
    let train = dir.path().join("runs/default/synth/train.jsonl");
    let mut text = std::fs::read_to_string(&train).unwrap();
    text.push('\n');
    std::fs::write(&train, text).unwrap();
    let out = cofprm(dir.path(), &["correct"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "digest_mismatch");
}

#[test]
fn direct_label_and_correct() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cofprm(dir.path(), &["ingest"]).status.code(), Some(0));
    assert_eq!(cofprm(dir.path(), &["generate"]).status.code(), Some(0));
    let run = dir.path().join("runs/default");
    let out = cofprm(
        dir.path(),
        &[
            "label",
            "mc",
            "--trajectories",
            run.join("generate/trajectories.jsonl").to_str().unwrap(),
            "--problems",
            run.join("ingest/problems.jsonl").to_str().unwrap(),
            "--k",
            "4",
            "--out",
            "bundle",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("bundle/train.jsonl").is_file());
    let out = cofprm(dir.path(), &["train", "correct", "--bundle", "bundle", "--iters", "20", "--out", "corrected"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("corrected/params.json").is_file());
    assert!(!run.join("label").exists());
}

#[test]
fn judge_run_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let bank = StubSpec::mini_corpus();
    let entry = &bank.template_bank["sum-two"];
    std::fs::write(dir.path().join("good.py"), &entry.correct_sources[0]).unwrap();
    std::fs::write(dir.path().join("bad.py"), &entry.broken_sources[0]).unwrap();
    let run = |file: &str| cofprm(dir.path(), &["--json", "judge", "run", "--problem", "sum-two", "--source", file, "--time", "2s"]);
    let good = run("good.py");
    assert_eq!(good.status.code(), Some(0));
    let verdict: Value = serde_json::from_slice(&good.stdout).unwrap();
    assert_eq!(verdict["passed"], true);
    assert_eq!(run("bad.py").status.code(), Some(1));
    assert_eq!(run("absent.py").status.code(), Some(2));
}

#[test]
fn cof_commands() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/cof/alg_dijkstra.py");
    let out = cofprm(Path::new("."), &["--json", "cof", "decompose", fixture.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let d: Value = serde_json::from_slice(&out.stdout).unwrap();
    let names: Vec<&str> = d["steps"].as_array().unwrap().iter().map(|s| s["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["main", "dijkstra", "build_graph"]);
    let out = cofprm(Path::new("."), &["cof", "prompt", "--show"]);
    assert_eq!(out.stdout, cofprm::cof::COF_PROMPT_TEMPLATE.as_bytes());
}

#[test]
fn bad_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[meta]\nlearning_rate = 1.0\n").unwrap();
    let out = cofprm(dir.path(), &["--config", "c.toml", "synth"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "config");
    let out = cofprm(dir.path(), &["--config", "absent.toml", "synth"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_config_matches_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/default.toml");
    assert_eq!(PipelineConfig::load(&path).unwrap(), PipelineConfig::default());
}
