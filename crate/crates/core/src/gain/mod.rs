//! Pluggable marginal-gain oracles.
//!
//! An oracle scores how much a candidate demonstration improves the model's
//! grasp of the query given the demonstrations already chosen. Three kinds
//! ship here: a conditional-entropy oracle over token losses (white-box), a
//! 0-10 self-evaluation scorer for API-only models (black-box), and an
//! exactly monotone-submodular coverage oracle used to verify the search.

mod blackbox;
mod coverage;
mod entropy;
mod http;

pub use blackbox::{parse_score, BlackboxOracle, ChatBackend};
pub use coverage::{make_coverage_oracle, CoverageOracle};
pub use entropy::{
    whitespace_tokens, EntropyOracle, NllBackend, TokenLoss, TriggerMock, UniformMock,
};
pub use http::{HttpChatBackend, HttpCompletionsBackend, HttpLmConfig};

use thiserror::Error;

use crate::corpus::{InstanceRecord, Query};
use crate::prompts::TemplateError;

#[derive(Debug, Error)]
pub enum GainError {
    #[error("oracle unavailable after {attempts} attempts: {reason}")]
    Unavailable { attempts: u32, reason: String },
    #[error("oracle protocol error: {0}")]
    Protocol(String),
    #[error("candidate '{0}' is already in the demonstration set")]
    CandidateInDemoSet(String),
    #[error("oracle '{0}' exposes no conditional score")]
    NoConditionalScore(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Oracle kind tag plus a hash of its configuration, recorded in traces so
/// runs are attributable to an exact oracle setup.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct OracleIdentity {
    pub kind: String,
    pub config_hash: String,
}

impl OracleIdentity {
    pub fn new(kind: &str, config: &str) -> Self {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(config.as_bytes());
        let mut hash = String::with_capacity(16);
        for b in &digest[..8] {
            hash.push_str(&format!("{b:02x}"));
        }
        OracleIdentity {
            kind: kind.to_string(),
            config_hash: hash,
        }
    }
}

/// Contract for marginal-gain scoring.
///
/// Implementations are pure: identical arguments return identical values
/// (internal caching is allowed). Oracles that score through a conditional
/// quantity also expose it via [`GainOracle::cond_score`], and for those
/// `evaluate(q, s, v) == cond_score(q, s) - cond_score(q, s + v)`.
pub trait GainOracle: Send + Sync {
    /// Marginal gain of adding `candidate` to `demos` for `query`.
    fn evaluate(
        &self,
        query: &Query,
        demos: &[&InstanceRecord],
        candidate: &InstanceRecord,
    ) -> Result<f64, GainError>;

    /// Conditional score of the query under the demo set, when the oracle
    /// kind has one (`None` for pure scorers like the black-box variant).
    fn cond_score(
        &self,
        query: &Query,
        demos: &[&InstanceRecord],
    ) -> Result<Option<f64>, GainError>;

    fn identity(&self) -> OracleIdentity;
}

pub(crate) fn reject_duplicate_candidate(
    demos: &[&InstanceRecord],
    candidate: &InstanceRecord,
) -> Result<(), GainError> {
    if demos.iter().any(|d| d.id == candidate.id) {
        return Err(GainError::CandidateInDemoSet(candidate.id.clone()));
    }
    Ok(())
}

/// Information gain of a whole demo set relative to zero-shot:
/// `cond(query, empty) - cond(query, demos)`.
pub fn pilot_delta_h(
    oracle: &dyn GainOracle,
    query: &Query,
    demos: &[&InstanceRecord],
) -> Result<f64, GainError> {
    let zero = oracle
        .cond_score(query, &[])?
        .ok_or_else(|| GainError::NoConditionalScore(oracle.identity().kind))?;
    let with = oracle
        .cond_score(query, demos)?
        .ok_or_else(|| GainError::NoConditionalScore(oracle.identity().kind))?;
    Ok(zero - with)
}
