use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::cof::{decompose, extract_docstring, PrefixState};
use crate::corpus::Problem;

pub const FEATURE_SCHEMA_VERSION: u32 = 1;
pub const HASH_BUCKETS: usize = 16;
pub const HANDCRAFTED: usize = 8;
/// Length of a schema-1 feature vector.
pub const FEATURE_DIM: usize = HANDCRAFTED + HASH_BUCKETS;

pub const FEATURE_NAMES: [&str; HANDCRAFTED] = [
    "fraction_completed",
    "log_step_count",
    "log_mean_step_tokens",
    "docstring_coverage",
    "statement_identifier_overlap",
    "algorithm_keywords",
    "brackets_balanced",
    "quotes_balanced",
];

const ALGO_KEYWORDS: [&str; 16] = [
    "heapq", "heappush", "heappop", "deque", "bisect", "sorted", "sort", "lru_cache",
    "gcd", "dfs", "bfs", "dp", "memo", "stack", "queue", "graph",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema_version: u32,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            schema_version: FEATURE_SCHEMA_VERSION,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Word-ish tokens: runs of `[A-Za-z0-9_]`, plus every other non-space char.
pub(crate) fn tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        let word = c.is_ascii_alphanumeric() || c == '_';
        match (word, start) {
            (true, None) => start = Some(i),
            (true, Some(_)) => {}
            (false, s) => {
                if let Some(s) = s {
                    out.push(&text[s..i]);
                    start = None;
                }
                if !c.is_whitespace() {
                    out.push(&text[i..i + c.len_utf8()]);
                }
            }
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

fn identifiers(text: &str) -> impl Iterator<Item = String> + '_ {
    tokens(text)
        .into_iter()
        .filter(|t| t.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_'))
        .map(str::to_ascii_lowercase)
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// (brackets balanced, strings terminated), skipping strings and comments.
pub(crate) fn balance(code: &str) -> (bool, bool) {
    let b = code.as_bytes();
    let mut stack = Vec::new();
    let mut mismatch = false;
    let mut i = 0;
    while i < b.len() {
        match b[i] {
            b'#' => {
                while i < b.len() && b[i] != b'\n' {
                    i += 1;
                }
            }
            q @ (b'\'' | b'"') => {
                let triple = b.get(i + 1) == Some(&q) && b.get(i + 2) == Some(&q);
                i += if triple { 3 } else { 1 };
                let mut closed = false;
                while i < b.len() {
                    if b[i] == b'\\' {
                        i += 2;
                        continue;
                    }
                    if !triple && b[i] == b'\n' {
                        break;
                    }
                    if b[i] == q && (!triple || (b.get(i + 1) == Some(&q) && b.get(i + 2) == Some(&q))) {
                        i += if triple { 2 } else { 0 };
                        closed = true;
                        break;
                    }
                    i += 1;
                }
                if !closed {
                    return (!mismatch && stack.is_empty(), false);
                }
            }
            open @ (b'(' | b'[' | b'{') => stack.push(open),
            close @ (b')' | b']' | b'}') => {
                let want = match close {
                    b')' => b'(',
                    b']' => b'[',
                    _ => b'{',
                };
                if stack.pop() != Some(want) {
                    mismatch = true;
                }
            }
            _ => {}
        }
        i += 1;
    }
    (!mismatch && stack.is_empty(), true)
}

/// Schema-1 features of a prefix state. See FEATURES.md for the table.
pub fn featurize(prefix: &PrefixState, problem: &Problem) -> FeatureVector {
    let code = prefix.code();
    let steps = decompose(code).map(|d| d.steps).unwrap_or_default();
    let n = steps.len();

    let mut v = vec![0.0; FEATURE_DIM];
    v[0] = prefix.fraction_completed();
    v[1] = (prefix.step_index as f64).ln_1p();
    if n > 0 {
        let total: usize = steps.iter().map(|s| tokens(&s.text).len()).sum();
        v[2] = (total as f64 / n as f64).ln_1p();
        let documented = steps.iter().filter(|s| extract_docstring(s).is_some()).count();
        v[3] = documented as f64 / n as f64;
        let ids: HashSet<String> = steps
            .iter()
            .flat_map(|s| identifiers(&s.text).collect::<Vec<_>>())
            .filter(|t| t.len() >= 3)
            .collect();
        if !ids.is_empty() {
            let words: HashSet<String> = identifiers(&problem.statement).collect();
            v[4] = ids.intersection(&words).count() as f64 / ids.len() as f64;
        }
    }
    let code_ids: Vec<String> = identifiers(code).collect();
    let present: HashSet<&str> = code_ids.iter().map(String::as_str).collect();
    v[5] = ALGO_KEYWORDS.iter().filter(|k| present.contains(*k)).count() as f64
        / ALGO_KEYWORDS.len() as f64;
    let (brackets, quotes) = balance(code);
    v[6] = f64::from(u8::from(brackets));
    v[7] = f64::from(u8::from(quotes));
    if !code_ids.is_empty() {
        let unit = 1.0 / code_ids.len() as f64;
        for id in &code_ids {
            v[HANDCRAFTED + (fnv1a(id.as_bytes()) % HASH_BUCKETS as u64) as usize] += unit;
        }
    }
    FeatureVector::new(v)
}
