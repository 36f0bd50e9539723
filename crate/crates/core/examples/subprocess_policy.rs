//! Drives a policy through the subprocess adapter. The command here is a
//! shell one-liner that always answers with the same program.

use std::time::Duration;

use cofprm::corpus::mini_corpus;
use cofprm::policy::{generate_candidates, GenerationOptions, RetryPolicy, SubprocessPolicy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let command = r#"cat > /dev/null; printf '%s' '{"completion": "def main():\n    a, b = map(int, input().split())\n    print(a + b)\n\n\nmain()\n"}'"#;
    let policy = SubprocessPolicy::new(command.to_owned(), Duration::from_secs(10), 2);
    let problems = mini_corpus();
    let problem = problems.get("sum-two").expect("bundled problem");
    let opts = GenerationOptions {
        retry: RetryPolicy::immediate(2),
        ..GenerationOptions::default()
    };
    for (i, src) in generate_candidates(problem, 2, &policy, &opts)?.iter().enumerate() {
        println!("candidate {i}:\n{src}");
    }
    Ok(())
}
