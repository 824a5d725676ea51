//! Black-box gain surrogate for API-only models.
//!
//! When token losses are not accessible, the model itself rates how much
//! additional useful information a candidate provides, as a single integer
//! from 0 to 10. The score stands in for the marginal gain; selection stops
//! when the best score reaches zero.

use super::{reject_duplicate_candidate, GainError, GainOracle, OracleIdentity};
use crate::corpus::{InstanceRecord, Query};
use crate::prompts::Task;

/// Transport for chat-style scoring calls. Returns the assistant reply text.
pub trait ChatBackend: Send + Sync {
    fn chat(&self, prompt: &str) -> Result<String, GainError>;
}

/// Parses a self-evaluation reply: exactly one integer in 0..=10, optionally
/// surrounded by whitespace. Anything else is `None`.
pub fn parse_score(reply: &str) -> Option<u8> {
    let value: i64 = reply.trim().parse().ok()?;
    if (0..=10).contains(&value) {
        Some(value as u8)
    } else {
        None
    }
}

const STRICT_REMINDER: &str =
    "\n\nReminder: output ONLY a single integer from 0 to 10, with no other text.";

pub struct BlackboxOracle<B: ChatBackend> {
    backend: B,
    task: Task,
}

impl<B: ChatBackend> BlackboxOracle<B> {
    pub fn new(backend: B, task: Task) -> Self {
        BlackboxOracle { backend, task }
    }

    /// Assembles the self-evaluation prompt for one candidate.
    pub fn scoring_prompt(
        &self,
        query: &Query,
        demos: &[&InstanceRecord],
        candidate: &InstanceRecord,
    ) -> String {
        let selected = if demos.is_empty() {
            "(none yet)".to_string()
        } else {
            demos
                .iter()
                .enumerate()
                .map(|(i, d)| format!("Example {}:\n{}\nLabel: {}", i + 1, d.record_text, d.label))
                .collect::<Vec<_>>()
                .join("\n\n")
        };
        format!(
            "You are evaluating whether a candidate patient example would be helpful for \
             predicting a test patient's clinical outcome.\n\n\
             Task:\n{task}\n\n\
             Already Selected Examples for In-Context Learning:\n{selected}\n\n\
             Candidate Example to Evaluate:\n{candidate}\n\n\
             Test Patient to Predict:\n{target}\n\n\
             Instruction:\n\
             Rate how much additional useful information the candidate example provides for \
             predicting the test patient's outcome, considering:\n\
             - Clinical similarity or complementarity to the test patient\n\
             - Whether it provides new information not already covered by selected examples\n\
             - How much it would help reduce uncertainty about the test patient's outcome\n\n\
             Score Definition (0-10):\n\
             - 0: completely redundant or irrelevant\n\
             - 5: moderately helpful, provides some new perspective\n\
             - 10: extremely informative, highly relevant and complementary\n\n\
             Output Format:\n\
             Output ONLY a single integer score from 0 to 10, and nothing else.",
            task = self.task.description(),
            selected = selected,
            candidate = candidate.record_text,
            target = query.record_text,
        )
    }

    /// Scores one candidate. An unparsable reply triggers a single retry
    /// with a stricter reminder; a second failure scores the candidate 0.
    pub fn score(
        &self,
        query: &Query,
        demos: &[&InstanceRecord],
        candidate: &InstanceRecord,
    ) -> Result<u8, GainError> {
        let prompt = self.scoring_prompt(query, demos, candidate);
        let reply = self.backend.chat(&prompt)?;
        if let Some(score) = parse_score(&reply) {
            return Ok(score);
        }
        let retry_prompt = format!("{prompt}{STRICT_REMINDER}");
        let retry_reply = self.backend.chat(&retry_prompt)?;
        match parse_score(&retry_reply) {
            Some(score) => Ok(score),
            None => {
                log::warn!(
                    "candidate '{}': unparsable score replies ({reply:?}, {retry_reply:?}); scoring 0",
                    candidate.id
                );
                Ok(0)
            }
        }
    }
}

impl<B: ChatBackend> GainOracle for BlackboxOracle<B> {
    fn evaluate(
        &self,
        query: &Query,
        demos: &[&InstanceRecord],
        candidate: &InstanceRecord,
    ) -> Result<f64, GainError> {
        reject_duplicate_candidate(demos, candidate)?;
        Ok(self.score(query, demos, candidate)? as f64)
    }

    fn cond_score(
        &self,
        _query: &Query,
        _demos: &[&InstanceRecord],
    ) -> Result<Option<f64>, GainError> {
        Ok(None)
    }

    fn identity(&self) -> OracleIdentity {
        OracleIdentity::new("blackbox", &format!("task={:?}", self.task))
    }
}
