use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum VerdictError {
    #[error("reply contains no `The answer is image <k>` verdict")]
    NoVerdictFound,
    #[error("verdict names image {chosen} but only {pool_size} were shown")]
    IndexOutOfRange { chosen: u64, pool_size: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    /// 1-based, as the judge numbers images.
    pub chosen_index: usize,
    pub analysis: String,
}

fn verdict_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\bthe\s+answer\s+is\s+image\s*#?\s*(\d+)").expect("verdict regex")
    })
}

/// Extracts the first `The answer is image <k>` verdict from a judge reply.
pub fn parse_judge_verdict(reply: &str, pool_size: usize) -> Result<JudgeVerdict, VerdictError> {
    let caps = verdict_pattern()
        .captures(reply)
        .ok_or(VerdictError::NoVerdictFound)?;
    let digits = caps.get(1).expect("group 1 always matches");
    // Anything that overflows u64 is certainly out of range.
    let chosen = digits.as_str().parse::<u64>().unwrap_or(u64::MAX);
    if chosen < 1 || chosen > pool_size as u64 {
        return Err(VerdictError::IndexOutOfRange { chosen, pool_size });
    }
    let rest = &reply[digits.end()..];
    let analysis = rest
        .trim_start_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .trim_end()
        .to_string();
    Ok(JudgeVerdict {
        chosen_index: chosen as usize,
        analysis,
    })
}

pub const NO_PROBLEM_SENTINEL: &str = "No problem found.";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RepairVerdict {
    NoProblem,
    /// Carries the whole reply; the caller re-parses it as a script.
    NeedsRevision(String),
}

pub fn parse_repair_verdict(reply: &str) -> RepairVerdict {
    if reply.contains(NO_PROBLEM_SENTINEL) {
        RepairVerdict::NoProblem
    } else {
        RepairVerdict::NeedsRevision(reply.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn verdict_examples() {
        let v = parse_judge_verdict("The answer is image 3. It best matches the garden.", 4).unwrap();
        assert_eq!(v.chosen_index, 3);
        assert_eq!(v.analysis, "It best matches the garden.");
        assert_eq!(
            parse_judge_verdict("I cannot decide.", 4),
            Err(VerdictError::NoVerdictFound)
        );
        assert_eq!(
            parse_judge_verdict("The answer is image 7", 4),
            Err(VerdictError::IndexOutOfRange { chosen: 7, pool_size: 4 })
        );
        assert_eq!(
            parse_judge_verdict("THE ANSWER IS IMAGE 2!!", 4).unwrap().chosen_index,
            2
        );
        assert!(matches!(
            parse_judge_verdict("The answer is image 99999999999999999999999", 4),
            Err(VerdictError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn first_verdict_wins() {
        let v = parse_judge_verdict("the answer is image 1, not the answer is image 2", 4).unwrap();
        assert_eq!(v.chosen_index, 1);
    }

    #[test]
    fn repair_verdicts() {
        assert_eq!(parse_repair_verdict("No problem found."), RepairVerdict::NoProblem);
        let revised = "Yes. Revised script: ## Characters ...";
        assert_eq!(
            parse_repair_verdict(revised),
            RepairVerdict::NeedsRevision(revised.into())
        );
        assert_eq!(parse_repair_verdict(""), RepairVerdict::NeedsRevision(String::new()));
    }

    proptest! {
        #[test]
        fn verdict_index_always_in_range(reply in "\\PC{0,30}(The answer is image [0-9]{1,3})?\\PC{0,10}", pool in 1usize..12) {
            if let Ok(v) = parse_judge_verdict(&reply, pool) {
                prop_assert!((1..=pool).contains(&v.chosen_index));
            }
        }
    }
}
