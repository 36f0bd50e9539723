use crate::corpus::Problem;

pub const COF_PROMPT_VERSION: u32 = 1;

/// Code-organization instructions that precede every problem statement.
pub const COF_PROMPT_TEMPLATE: &str = include_str!("../../assets/cof_prompt_v1.txt");

/// Instruction block, a blank line, then the problem statement verbatim.
pub fn cof_prompt(problem: &Problem) -> String {
    format!("{COF_PROMPT_TEMPLATE}\nQuestion:\n{}\n", problem.statement)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Difficulty, TestCase};

    fn problem(statement: &str) -> Problem {
        Problem {
            id: "p".into(),
            statement: statement.into(),
            tests: vec![TestCase {
                input: String::new(),
                expected_output: String::new(),
            }],
            published_at: "2024-01-01".parse().unwrap(),
            difficulty: Difficulty::Unknown,
        }
    }

    #[test]
    fn contains_guidelines_and_statement() {
        let p = cof_prompt(&problem("Add two numbers."));
        assert!(p.contains("1. Function Organization:"));
        assert!(p.contains("2. Write Docstrings in Each Function (Chain of Thought):"));
        assert!(p.contains("3. Extract logic into separate methods"));
        assert!(p.contains("Add two numbers."));
        assert!(p.starts_with("You will be given a question (problem specification)"));
    }

    #[test]
    fn only_statement_section_differs() {
        let a = cof_prompt(&problem("first"));
        let b = cof_prompt(&problem("second problem"));
        let prefix = format!("{COF_PROMPT_TEMPLATE}\nQuestion:\n");
        assert_eq!(a.strip_prefix(&prefix), Some("first\n"));
        assert_eq!(b.strip_prefix(&prefix), Some("second problem\n"));
    }
}
