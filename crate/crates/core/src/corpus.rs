//! Problems, trajectories and label rows: data model, JSONL persistence and
//! temporal splitting.
//!
//! Every store is a JSON-lines file with one record per line. Stores are
//! immutable after load and preserve file order.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::judge::Verdict;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("record {index}: missing field {field}")]
    MissingField { index: usize, field: &'static str },
    #[error("record {index}: {message}")]
    Malformed { index: usize, message: String },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("label rows reference unknown trajectory ids: {0:?}")]
    DanglingTrajectories(Vec<String>),
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
    #[default]
    Unknown,
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
            Difficulty::Unknown => "unknown",
        };
        f.write_str(s)
    }
}

/// One hidden unit test. `input` is fed to standard input verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: String,
    #[serde(rename = "output")]
    pub expected_output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub statement: String,
    pub tests: Vec<TestCase>,
    pub published_at: NaiveDate,
    #[serde(default)]
    pub difficulty: Difficulty,
}

/// Candidate program for a problem. `steps` and `final_verdict` are derived
/// state and are not part of the persisted record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub problem_id: String,
    pub source: String,
    #[serde(skip)]
    pub steps: Vec<crate::cof::Step>,
    #[serde(skip)]
    pub final_verdict: Option<Verdict>,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, problem_id: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            problem_id: problem_id.into(),
            source: source.into(),
            steps: Vec::new(),
            final_verdict: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Mc,
    UnitTest,
}

/// Persisted form of a labeled prefix. Features are kept in a sibling file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub trajectory_id: String,
    pub step_index: usize,
    pub value: f64,
    pub provenance: Provenance,
    pub learnable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_before: NaiveDate,
    pub test_after: NaiveDate,
}

impl SplitSpec {
    pub fn new(train_before: NaiveDate, test_after: NaiveDate) -> Result<Self, String> {
        if train_before > test_after {
            return Err(format!(
                "train_before {train_before} must not be later than test_after {test_after}"
            ));
        }
        Ok(Self {
            train_before,
            test_after,
        })
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_before: NaiveDate::from_ymd_opt(2024, 8, 1).unwrap(),
            test_after: NaiveDate::from_ymd_opt(2025, 2, 1).unwrap(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProblemFormat {
    /// One JSON object per line.
    #[default]
    Jsonl,
    /// A single JSON array of records.
    JsonArray,
}

/// Ordered, id-indexed set of problems.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProblemStore {
    problems: IndexMap<String, Problem>,
}

impl ProblemStore {
    pub fn from_problems(problems: impl IntoIterator<Item = Problem>) -> Result<Self> {
        let mut store = Self::default();
        for p in problems {
            store.insert(p)?;
        }
        Ok(store)
    }

    fn insert(&mut self, p: Problem) -> Result<()> {
        if self.problems.contains_key(&p.id) {
            return Err(CorpusError::DuplicateId(p.id));
        }
        self.problems.insert(p.id.clone(), p);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Problem> {
        self.problems.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Problem> {
        self.problems.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.problems.keys().map(String::as_str)
    }
}

const REQUIRED_PROBLEM_FIELDS: [&str; 4] = ["id", "statement", "tests", "published_at"];

fn parse_problem(index: usize, value: Value) -> Result<Problem> {
    let obj = value.as_object().ok_or_else(|| CorpusError::Malformed {
        index,
        message: "expected a JSON object".into(),
    })?;
    for field in REQUIRED_PROBLEM_FIELDS {
        if !obj.contains_key(field) {
            return Err(CorpusError::MissingField { index, field });
        }
    }
    let problem: Problem = serde_json::from_value(value).map_err(|e| CorpusError::Malformed {
        index,
        message: e.to_string(),
    })?;
    if problem.id.is_empty() {
        return Err(CorpusError::Malformed {
            index,
            message: "id is empty".into(),
        });
    }
    if problem.tests.is_empty() {
        return Err(CorpusError::Malformed {
            index,
            message: "tests is empty".into(),
        });
    }
    Ok(problem)
}

/// Yields `(record_index, line)` for non-blank lines; indices are 1-based.
fn jsonl_records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| (i + 1, l))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))
}

/// The bundled ten-problem corpus.
pub const MINI_CORPUS_PROBLEMS: &str = include_str!("../assets/mini_corpus/problems.jsonl");

pub fn mini_corpus() -> ProblemStore {
    parse_problems(MINI_CORPUS_PROBLEMS, ProblemFormat::Jsonl).expect("bundled corpus parses")
}

pub fn load_problems(path: &Path, format: ProblemFormat) -> Result<ProblemStore> {
    let text = read_to_string(path)?;
    parse_problems(&text, format)
}

pub fn parse_problems(text: &str, format: ProblemFormat) -> Result<ProblemStore> {
    let values: Vec<(usize, Value)> = match format {
        ProblemFormat::Jsonl => jsonl_records(text)
            .map(|(i, line)| {
                serde_json::from_str(line)
                    .map(|v| (i, v))
                    .map_err(|e| CorpusError::Malformed {
                        index: i,
                        message: e.to_string(),
                    })
            })
            .collect::<Result<_>>()?,
        ProblemFormat::JsonArray => {
            if text.trim().is_empty() {
                Vec::new()
            } else {
                let arr: Vec<Value> =
                    serde_json::from_str(text).map_err(|e| CorpusError::Malformed {
                        index: 0,
                        message: e.to_string(),
                    })?;
                arr.into_iter().enumerate().map(|(i, v)| (i + 1, v)).collect()
            }
        }
    };
    let mut store = ProblemStore::default();
    for (index, value) in values {
        store.insert(parse_problem(index, value)?)?;
    }
    Ok(store)
}

fn write_lines<T: Serialize>(path: &Path, header: Option<&Value>, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| CorpusError::io(parent, e))?;
        }
    }
    let file = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |v: String| writeln!(w, "{v}").map_err(|e| CorpusError::io(path, e));
    if let Some(h) = header {
        emit(h.to_string())?;
    }
    for row in rows {
        emit(serde_json::to_string(row).expect("record serializes"))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}

pub fn save_problems(path: &Path, store: &ProblemStore) -> Result<()> {
    let rows: Vec<&Problem> = store.iter().collect();
    write_lines(path, None, &rows)
}

/// Partition by publication date. Problems dated in `[train_before, test_after]`
/// belong to neither side.
pub fn temporal_split(store: &ProblemStore, spec: &SplitSpec) -> (ProblemStore, ProblemStore) {
    let mut train = ProblemStore::default();
    let mut test = ProblemStore::default();
    for p in store.iter() {
        if p.published_at < spec.train_before {
            train.problems.insert(p.id.clone(), p.clone());
        } else if p.published_at > spec.test_after {
            test.problems.insert(p.id.clone(), p.clone());
        }
    }
    (train, test)
}

/// Ordered, id-indexed set of trajectories.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryStore {
    trajectories: IndexMap<String, Trajectory>,
}

impl TrajectoryStore {
    pub fn from_trajectories(items: impl IntoIterator<Item = Trajectory>) -> Result<Self> {
        let mut trajectories = IndexMap::new();
        for t in items {
            if trajectories.contains_key(&t.id) {
                return Err(CorpusError::DuplicateId(t.id));
            }
            trajectories.insert(t.id.clone(), t);
        }
        Ok(Self { trajectories })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Trajectory> {
        self.trajectories.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.values()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.trajectories.contains_key(id)
    }
}

pub fn load_trajectories(path: &Path) -> Result<TrajectoryStore> {
    let text = read_to_string(path)?;
    let mut items = Vec::new();
    for (index, line) in jsonl_records(&text) {
        let value: Value = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            index,
            message: e.to_string(),
        })?;
        for field in ["id", "problem_id", "source"] {
            if value.get(field).is_none() {
                return Err(CorpusError::MissingField { index, field });
            }
        }
        let t: Trajectory = serde_json::from_value(value).map_err(|e| CorpusError::Malformed {
            index,
            message: e.to_string(),
        })?;
        items.push(t);
    }
    TrajectoryStore::from_trajectories(items)
}

pub fn save_trajectories(path: &Path, store: &TrajectoryStore) -> Result<()> {
    let rows: Vec<&Trajectory> = store.iter().collect();
    write_lines(path, None, &rows)
}

pub const LABELS_FORMAT: &str = "cofprm.labels";
pub const LABELS_VERSION: u32 = 1;

fn labels_header() -> Value {
    serde_json::json!({ "format": LABELS_FORMAT, "version": LABELS_VERSION })
}

/// Rows whose trajectory id is not in `known`, sorted and deduplicated.
pub fn dangling_trajectory_ids<'a>(
    rows: &'a [LabelRecord],
    known: &HashSet<&str>,
) -> Vec<&'a str> {
    rows.iter()
        .map(|r| r.trajectory_id.as_str())
        .filter(|id| !known.contains(id))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Write label rows after checking that every row references a known
/// trajectory. The file starts with a one-line format header.
pub fn save_labels(path: &Path, rows: &[LabelRecord], known: &HashSet<&str>) -> Result<()> {
    let dangling = dangling_trajectory_ids(rows, known);
    if !dangling.is_empty() {
        return Err(CorpusError::DanglingTrajectories(
            dangling.into_iter().map(str::to_owned).collect(),
        ));
    }
    write_lines(path, Some(&labels_header()), rows)
}

/// Write label rows without reference checking (synthetic bundles have no
/// trajectory store).
pub fn save_labels_unchecked(path: &Path, rows: &[LabelRecord]) -> Result<()> {
    write_lines(path, Some(&labels_header()), rows)
}

pub fn load_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    let text = read_to_string(path)?;
    let mut rows = Vec::new();
    for (index, line) in jsonl_records(&text) {
        let value: Value = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            index,
            message: e.to_string(),
        })?;
        if index == 1 && value.get("format").is_some() {
            if value["format"] != LABELS_FORMAT {
                return Err(CorpusError::Malformed {
                    index,
                    message: format!("unexpected header {value}"),
                });
            }
            continue;
        }
        for field in ["trajectory_id", "step_index", "value", "provenance", "learnable"] {
            if value.get(field).is_none() {
                return Err(CorpusError::MissingField { index, field });
            }
        }
        let row: LabelRecord = serde_json::from_value(value).map_err(|e| CorpusError::Malformed {
            index,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Judge comparison rule: trailing whitespace is stripped from every line and
/// trailing blank lines are dropped.
pub fn normalize_output(bytes: &[u8]) -> Vec<&[u8]> {
    let mut lines: Vec<&[u8]> = bytes
        .split(|&b| b == b'\n')
        .map(|line| {
            let end = line
                .iter()
                .rposition(|b| !b.is_ascii_whitespace())
                .map_or(0, |p| p + 1);
            &line[..end]
        })
        .collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines
}

pub fn outputs_match(actual: &[u8], expected: &[u8]) -> bool {
    normalize_output(actual) == normalize_output(expected)
}
