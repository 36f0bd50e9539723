//! Judges every template of the stub bank against its mini-corpus problem.
//! Needs python3 (or JUDGE_INTERPRETER).

use cofprm::corpus::mini_corpus;
use cofprm::judge::{Judge, Limits};
use cofprm::policy::StubSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let judge = Judge::from_env(Limits::default(), 8)?;
    let problems = mini_corpus();
    for (pid, entry) in &StubSpec::mini_corpus().template_bank {
        let tests = &problems.get(pid).expect("bank problem").tests;
        for (kind, list) in [("correct", &entry.correct_sources), ("broken", &entry.broken_sources)] {
            for src in list {
                let v = judge.run(src, tests)?;
                println!("{pid:<16} {kind:<8} passed={:<5} {:?} in {:?}", v.passed, v.per_test, v.wall_time_total);
            }
        }
    }
    Ok(())
}
