//! Function-as-step decomposition of candidate programs.
//!
//! A candidate is split into a preamble (imports, constants), one step per
//! top-level function, and an epilogue (the trailing entry-point code). The
//! split is a byte-exact partition of the source.
//!
//! Boundary rules:
//! - a step starts at its `def` line, or earlier at the first zero-indent
//!   comment or decorator that follows the last module-level statement above it;
//! - module-level statements between two functions stay with the preceding step;
//! - the first module-level statement after the last function opens the
//!   epilogue (together with any comments directly above it);
//! - nested definitions are body lines of their enclosing function.

mod prompt;
mod scan;

pub use prompt::{cof_prompt, COF_PROMPT_TEMPLATE, COF_PROMPT_VERSION};

use serde::{Deserialize, Serialize};

use crate::corpus::Problem;
use scan::{classify, LineKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum DecompositionError {
    #[error("source is empty")]
    Empty,
    #[error("source has no top-level function definitions")]
    NoFunctions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    /// 1-based position in source order.
    pub index: usize,
    pub name: String,
    pub docstring: Option<String>,
    /// Verbatim slice of the source.
    pub text: String,
    /// 1-based inclusive line range of `text`.
    pub line_span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    pub preamble: String,
    pub steps: Vec<Step>,
    pub epilogue: String,
}

impl Decomposition {
    pub fn reconstruct(&self) -> String {
        let mut out = self.code_through(self.steps.len());
        out.push_str(&self.epilogue);
        out
    }

    /// Preamble followed by the first `n` steps.
    pub fn code_through(&self, n: usize) -> String {
        let mut out = self.preamble.clone();
        for step in &self.steps[..n.min(self.steps.len())] {
            out.push_str(&step.text);
        }
        out
    }

    pub fn step_names(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.name.as_str()).collect()
    }
}

/// Groups of lines that start at a zero-indent logical line (or a blank line)
/// and absorb the body lines after it.
#[derive(Debug, Clone, Copy)]
struct Unit {
    start: usize,
    kind: LineKind,
}

fn units(kinds: &[LineKind], range: std::ops::Range<usize>) -> Vec<Unit> {
    let mut out: Vec<Unit> = Vec::new();
    for i in range {
        match kinds[i] {
            LineKind::Body if !out.is_empty() => {}
            k => out.push(Unit { start: i, kind: k }),
        }
    }
    out
}

/// Where the material in `range` hands over to the next step: everything up
/// to and including the last statement stays behind; from the first comment or
/// decorator after it, lines belong to what follows.
fn lead_in_start(kinds: &[LineKind], range: std::ops::Range<usize>) -> usize {
    let end = range.end;
    let us = units(kinds, range);
    let after_stmt = us
        .iter()
        .rposition(|u| u.kind == LineKind::Statement)
        .map_or(0, |p| p + 1);
    us[after_stmt..]
        .iter()
        .find(|u| matches!(u.kind, LineKind::Comment | LineKind::Decorator))
        .map_or(end, |u| u.start)
}

/// Start of the epilogue within the tail `range` after the last function body.
fn epilogue_start(kinds: &[LineKind], range: std::ops::Range<usize>) -> usize {
    let end = range.end;
    let us = units(kinds, range);
    let Some(first_stmt) = us.iter().position(|u| u.kind == LineKind::Statement) else {
        return end;
    };
    us[..first_stmt]
        .iter()
        .find(|u| matches!(u.kind, LineKind::Comment | LineKind::Decorator))
        .unwrap_or(&us[first_stmt])
        .start
}

/// End (exclusive) of the body that starts at the definition on line `def`:
/// the body runs over indented and blank lines, minus trailing blanks.
fn body_end(kinds: &[LineKind], def: usize) -> usize {
    let mut end = def + 1;
    while end < kinds.len() && matches!(kinds[end], LineKind::Body | LineKind::Blank) {
        end += 1;
    }
    while end > def + 1 && kinds[end - 1] == LineKind::Blank {
        end -= 1;
    }
    end
}

pub fn decompose(source: &str) -> Result<Decomposition, DecompositionError> {
    if source.trim().is_empty() {
        return Err(DecompositionError::Empty);
    }
    let lines = classify(source);
    let kinds: Vec<LineKind> = lines.iter().map(|l| l.kind).collect();
    let defs: Vec<usize> = kinds
        .iter()
        .enumerate()
        .filter(|(_, k)| **k == LineKind::Def)
        .map(|(i, _)| i)
        .collect();
    if defs.is_empty() {
        return Err(DecompositionError::NoFunctions);
    }

    // Line index where each step begins.
    let mut starts = Vec::with_capacity(defs.len());
    let mut prev_end = 0;
    for &d in &defs {
        starts.push(lead_in_start(&kinds, prev_end..d).min(d));
        prev_end = body_end(&kinds, d);
    }
    let epi = epilogue_start(&kinds, prev_end..lines.len());

    let offsets: Vec<usize> = std::iter::once(0)
        .chain(lines.iter().scan(0, |acc, l| {
            *acc += l.text.len();
            Some(*acc)
        }))
        .collect();
    let slice = |from: usize, to: usize| &source[offsets[from]..offsets[to]];

    let steps = defs
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            let start = starts[k];
            let end = starts.get(k + 1).copied().unwrap_or(epi);
            let text = slice(start, end).to_owned();
            let def_offset = offsets[d] - offsets[start];
            Step {
                index: k + 1,
                name: lines[d].def_name.unwrap_or_default().to_owned(),
                docstring: docstring_after(&text[def_offset..]),
                text,
                line_span: (start + 1, end),
            }
        })
        .collect();

    Ok(Decomposition {
        preamble: slice(0, starts[0]).to_owned(),
        steps,
        epilogue: slice(epi, lines.len()).to_owned(),
    })
}

/// Docstring of a step: the first triple-quoted literal right after the
/// function signature. Unterminated literals yield `None`.
pub fn extract_docstring(step: &Step) -> Option<String> {
    let lines = classify(&step.text);
    let mut offset = 0;
    for line in &lines {
        if line.kind == LineKind::Def {
            return docstring_after(&step.text[offset..]);
        }
        offset += line.text.len();
    }
    None
}

fn docstring_after(def_text: &str) -> Option<String> {
    let mut rest = &def_text[scan::signature_end(def_text)?..];
    loop {
        rest = rest.trim_start();
        if rest.starts_with('#') {
            rest = rest.find('\n').map_or("", |p| &rest[p..]);
        } else {
            break;
        }
    }
    let rest = rest.trim_start_matches(['r', 'R', 'u', 'U']);
    let quote = if rest.starts_with("\"\"\"") {
        "\"\"\""
    } else if rest.starts_with("'''") {
        "'''"
    } else {
        return None;
    };
    let body = &rest[3..];
    let close = body.find(quote)?;
    Some(clean_docstring(&body[..close]))
}

/// Trim surrounding blank space and remove the common indentation of
/// continuation lines.
fn clean_docstring(raw: &str) -> String {
    let mut lines = raw.lines();
    let first = lines.next().unwrap_or("").trim();
    let rest: Vec<&str> = lines.collect();
    let indent = rest
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start().len())
        .min()
        .unwrap_or(0);
    let mut out = vec![first.to_owned()];
    out.extend(
        rest.iter()
            .map(|l| l.get(indent..).unwrap_or("").trim_end().to_owned()),
    );
    out.join("\n").trim().to_owned()
}

/// Partial solution state: the problem statement followed by the preamble and
/// the first `step_index` steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixState {
    pub problem_id: String,
    pub trajectory_id: String,
    pub step_index: usize,
    pub total_steps: usize,
    pub text: String,
    pub is_final: bool,
    /// Byte offset in `text` where the program code begins.
    pub code_start: usize,
}

impl PrefixState {
    pub fn code(&self) -> &str {
        &self.text[self.code_start..]
    }

    pub fn fraction_completed(&self) -> f64 {
        self.step_index as f64 / self.total_steps as f64
    }
}

pub fn prefix_header(problem: &Problem) -> String {
    format!("{}\n\n", problem.statement)
}

pub fn prefixes(problem: &Problem, trajectory_id: &str, d: &Decomposition) -> Vec<PrefixState> {
    let header = prefix_header(problem);
    let n = d.steps.len();
    (1..=n)
        .map(|i| PrefixState {
            problem_id: problem.id.clone(),
            trajectory_id: trajectory_id.to_owned(),
            step_index: i,
            total_steps: n,
            text: format!("{header}{}", d.code_through(i)),
            is_final: i == n,
            code_start: header.len(),
        })
        .collect()
}
