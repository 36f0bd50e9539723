//! Splits a Python program into steps and prints the prefix features.
//!
//! cargo run --example decompose_program -- path/to/solution.py

use cofprm::cof::{decompose, prefixes};
use cofprm::corpus::mini_corpus;
use cofprm::prm::{featurize, FEATURE_NAMES};

const DEFAULT: &str = include_str!("../tests/fixtures/cof/alg_dijkstra.py");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let source = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path)?,
        None => DEFAULT.to_owned(),
    };
    let d = decompose(&source)?;
    assert_eq!(d.reconstruct(), source);
    for s in &d.steps {
        println!("step {} {:<12} lines {:>3}-{:<3} doc: {}", s.index, s.name, s.line_span.0, s.line_span.1, s.docstring.is_some());
    }

    let store = mini_corpus();
    let problem = store.get("shortest-path").expect("bundled problem");
    for p in prefixes(problem, "example", &d) {
        let f = featurize(&p, problem);
        let head: Vec<String> = FEATURE_NAMES.iter().zip(&f.values).take(6).map(|(n, v)| format!("{n}={v:.3}")).collect();
        println!("prefix {}/{}: {}", p.step_index, p.total_steps, head.join(" "));
    }
    Ok(())
}
