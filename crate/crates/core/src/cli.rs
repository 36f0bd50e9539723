//! Command-line front end of the `cofprm` binary.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::cof;
use crate::corpus::{self, Problem, ProblemFormat};
use crate::judge::{Judge, TestOutcome};
use crate::pipeline::{self, Direct, PipelineConfig, PipelineError, RerankOverrides, Stage, StageReport};
use crate::rank::RerankMode;

#[derive(Debug, Parser)]
#[command(name = "cofprm", version, about = "Function-level process reward pipeline for generated programs")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed (overrides `seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory name under the runs root (overrides `run_id`).
    #[arg(long, global = true)]
    pub run_id: Option<String>,
    /// Runs root (overrides `paths.runs`).
    #[arg(long, global = true)]
    pub runs: Option<PathBuf>,
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load problems and split them by publication date.
    Ingest,
    /// Sample trajectories for train problems and candidates for test problems.
    Generate,
    /// Split every trajectory into function steps.
    Decompose,
    /// Build the labeled bundle, or label explicit files with `label mc`.
    Label {
        #[command(subcommand)]
        direct: Option<LabelCommand>,
    },
    /// Plain scorer training, or label correction on a bundle with `train correct`.
    Train {
        #[command(subcommand)]
        direct: Option<TrainCommand>,
    },
    /// Meta label correction on the run's bundle.
    Correct,
    /// Best-of-N selection and pass@1.
    Rerank(RerankArgs),
    /// Summarize the run.
    Eval,
    /// Write a planted-model bundle.
    Synth,
    /// Run ingest through eval.
    All,
    /// Step decomposition tools.
    Cof {
        #[command(subcommand)]
        command: CofCommand,
    },
    /// Run programs against problem tests.
    Judge {
        #[command(subcommand)]
        command: JudgeCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum LabelCommand {
    /// MC-label explicit trajectory and problem files into a bundle directory.
    Mc {
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        problems: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Round MC labels at this threshold.
        #[arg(long)]
        binarize: Option<f64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum TrainCommand {
    /// Correct the labels of a bundle directory.
    Correct {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[arg(long)]
    pub problems: Option<PathBuf>,
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<RerankMode>,
    /// Judge the selected candidates (the default).
    #[arg(long, conflicts_with = "no_judge")]
    pub judge: bool,
    #[arg(long)]
    pub no_judge: bool,
    /// Write results here instead of the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum CofCommand {
    /// Print the step-structured prompt.
    Prompt {
        /// Print the instruction template.
        #[arg(long)]
        show: bool,
        /// Print the full prompt for this bundled problem id.
        #[arg(long)]
        problem: Option<String>,
    },
    /// Split a Python file into preamble, steps and epilogue.
    Decompose { file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum JudgeCommand {
    /// Judge one program; exits 0 only if every test passes.
    Run {
        /// Problem id (looked up in --problems) or a JSON file with one problem.
        #[arg(long)]
        problem: String,
        #[arg(long)]
        problems: Option<PathBuf>,
        #[arg(long)]
        source: PathBuf,
        /// Wall time per test, e.g. 5s or 500ms.
        #[arg(long, value_parser = humantime::parse_duration)]
        time: Option<Duration>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

struct Failure {
    stage: Option<Stage>,
    error: PipelineError,
}

impl From<PipelineError> for Failure {
    fn from(error: PipelineError) -> Self {
        Self { stage: None, error }
    }
}

fn at(stage: Stage) -> impl Fn(PipelineError) -> Failure {
    move |error| Failure {
        stage: Some(stage),
        error,
    }
}

fn config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(id) = &cli.run_id {
        cfg.run_id = id.clone();
    }
    if let Some(runs) = &cli.runs {
        cfg.paths.runs = runs.clone();
    }
    Ok(cfg)
}

fn print_report(json: bool, r: &StageReport) {
    if json {
        println!("{}", serde_json::to_string(r).expect("report serializes"));
    } else {
        println!("{} -> {}", r.stage, r.run_dir.display());
        for path in r.outputs.keys() {
            println!("  wrote {path}");
        }
        println!("  {}", r.summary);
    }
}

fn load_problem(spec: &str, problems: Option<&Path>) -> Result<Problem, PipelineError> {
    let as_path = Path::new(spec);
    if as_path.is_file() {
        let text = std::fs::read_to_string(as_path).map_err(|e| PipelineError::io(as_path, e))?;
        return serde_json::from_str(&text).map_err(|e| PipelineError::io(as_path, e));
    }
    let store = match problems {
        Some(p) if !p.is_file() => {
            return Err(PipelineError::MissingInput {
                what: "problems".into(),
                path: p.to_owned(),
            })
        }
        Some(p) => corpus::load_problems(p, ProblemFormat::Jsonl).map_err(PipelineError::stage)?,
        None => corpus::mini_corpus(),
    };
    store
        .get(spec)
        .cloned()
        .ok_or_else(|| PipelineError::Config(format!("unknown problem {spec}")))
}

fn read_source(path: &Path) -> Result<String, PipelineError> {
    if !path.is_file() {
        return Err(PipelineError::MissingInput {
            what: "source".into(),
            path: path.to_owned(),
        });
    }
    std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

fn run(cli: &Cli) -> Result<i32, Failure> {
    let mut cfg = config(cli)?;
    let json = cli.json;
    let stage = |s: Stage, cfg: &PipelineConfig| -> Result<i32, Failure> {
        let r = pipeline::run_stage(s, cfg).map_err(at(s))?;
        print_report(json, &r);
        Ok(0)
    };
    match &cli.command {
        Command::Ingest => stage(Stage::Ingest, &cfg),
        Command::Generate => stage(Stage::Generate, &cfg),
        Command::Decompose => stage(Stage::Decompose, &cfg),
        Command::Label { direct: None } => stage(Stage::Label, &cfg),
        Command::Label {
            direct: Some(LabelCommand::Mc { trajectories, problems, k, out, binarize }),
        } => {
            cfg.paths.trajectories = Some(trajectories.clone());
            if let Some(k) = k {
                cfg.label.k = *k;
            }
            if binarize.is_some() {
                cfg.label.binarize = *binarize;
            }
            let direct = Direct {
                out: out.clone(),
                problems: Some(problems.clone()),
            };
            let r = pipeline::run_direct(Stage::Label, &cfg, &direct, &RerankOverrides::default()).map_err(at(Stage::Label))?;
            print_report(json, &r);
            Ok(0)
        }
        Command::Train { direct: None } => stage(Stage::Train, &cfg),
        Command::Train {
            direct: Some(TrainCommand::Correct { bundle, iters, out }),
        } => {
            cfg.paths.bundle = Some(bundle.clone());
            if let Some(t) = iters {
                cfg.meta.iterations = *t;
            }
            let direct = Direct {
                out: out.clone(),
                problems: None,
            };
            let r = pipeline::run_direct(Stage::Correct, &cfg, &direct, &RerankOverrides::default())
                .map_err(at(Stage::Correct))?;
            print_report(json, &r);
            Ok(0)
        }
        Command::Correct => stage(Stage::Correct, &cfg),
        Command::Rerank(a) => {
            let over = RerankOverrides {
                problems: a.problems.clone(),
                candidates: a.candidates.clone(),
                params: a.params.clone(),
                mode: a.mode,
                judge: Some(!a.no_judge),
            };
            let r = match &a.out {
                Some(out) => {
                    let direct = Direct {
                        out: out.clone(),
                        problems: None,
                    };
                    pipeline::run_direct(Stage::Rerank, &cfg, &direct, &over)
                }
                None => pipeline::run_stage_with(Stage::Rerank, &cfg, &over),
            }
            .map_err(at(Stage::Rerank))?;
            print_report(json, &r);
            Ok(0)
        }
        Command::Eval => stage(Stage::Eval, &cfg),
        Command::Synth => stage(Stage::Synth, &cfg),
        Command::All => {
            let reports = pipeline::run_all(&cfg).map_err(|(s, e)| at(s)(e))?;
            if json {
                println!("{}", serde_json::to_string(&reports).expect("reports serialize"));
            } else {
                reports.iter().for_each(|r| print_report(false, r));
            }
            Ok(0)
        }
        Command::Cof { command } => cof_command(command, json),
        Command::Judge {
            command: JudgeCommand::Run { problem, problems, source, time, workers },
        } => {
            let problem = load_problem(problem, problems.as_deref())?;
            let source = read_source(source)?;
            let mut limits = cfg.judge.limits();
            if let Some(t) = time {
                limits.wall_time_per_test = *t;
            }
            let workers = workers.unwrap_or(cfg.judge.workers);
            let judge = match &cfg.judge.interpreter {
                Some(name) => Judge::with_interpreter(name, limits, workers),
                None => Judge::from_env(limits, workers),
            }
            .map_err(PipelineError::stage)?;
            let verdict = judge.run(&source, &problem.tests).map_err(PipelineError::stage)?;
            if json {
                println!("{}", serde_json::to_string(&verdict).expect("verdict serializes"));
            } else {
                let passed = verdict.per_test.iter().filter(|o| **o == TestOutcome::Pass).count();
                println!(
                    "{}: {passed}/{} tests passed in {:?}",
                    if verdict.passed { "PASS" } else { "FAIL" },
                    verdict.per_test.len(),
                    verdict.wall_time_total
                );
                for (i, o) in verdict.per_test.iter().enumerate() {
                    println!("  test {}: {o:?}", i + 1);
                }
            }
            Ok(if verdict.passed { 0 } else { 1 })
        }
    }
}

fn cof_command(command: &CofCommand, json: bool) -> Result<i32, Failure> {
    match command {
        CofCommand::Prompt { show, problem } => {
            let text = match problem {
                Some(id) => cof::cof_prompt(&load_problem(id, None)?),
                None => cof::COF_PROMPT_TEMPLATE.to_owned(),
            };
            if json {
                println!("{}", json!({ "version": cof::COF_PROMPT_VERSION, "prompt": text }));
            } else if *show || problem.is_some() {
                print!("{text}");
            } else {
                println!("prompt template version {}; use --show to print it", cof::COF_PROMPT_VERSION);
            }
            Ok(0)
        }
        CofCommand::Decompose { file } => {
            let source = read_source(file)?;
            let d = cof::decompose(&source).map_err(PipelineError::stage)?;
            if json {
                println!("{}", serde_json::to_string(&d).expect("decomposition serializes"));
            } else {
                println!("preamble: {} bytes", d.preamble.len());
                for s in &d.steps {
                    let doc = if s.docstring.is_some() { " (documented)" } else { "" };
                    println!("step {}: {} lines {}-{}{doc}", s.index, s.name, s.line_span.0, s.line_span.1);
                }
                println!("epilogue: {} bytes", d.epilogue.len());
            }
            Ok(0)
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
/// Errors go to stderr as one JSON object.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(code) => code,
        Err(f) => {
            let mut err = std::io::stderr().lock();
            let _ = writeln!(err, "{}", f.error.to_json(f.stage));
            f.error.exit_code()
        }
    }
}
