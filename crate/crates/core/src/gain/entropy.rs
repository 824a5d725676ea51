//! Conditional-entropy oracle over token losses.
//!
//! The conditional score of a query given a demo set is the summed token
//! negative log-likelihood (nats) of the query record, conditioned on a
//! prompt that contains the demos. Summation (not averaging) is what makes
//! the marginal gain telescope: the gain of a set equals the sum of the
//! sequential gains along any insertion order.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{reject_duplicate_candidate, GainError, GainOracle, OracleIdentity};
use crate::corpus::{InstanceRecord, Query};
use crate::prompts::PromptTemplate;

/// Summed token negative log-likelihood over a text span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenLoss {
    /// Nats; non-negative for any proper token distribution.
    pub total_nll: f64,
    pub token_count: usize,
}

/// Source of token losses for whole prompts. `suffix_nll` scores only the
/// tokens at or after a byte offset; the default implementation takes the
/// difference of two full-prompt losses, which is exact whenever the
/// backend's tokenization splits at the offset.
pub trait NllBackend: Send + Sync {
    fn prompt_nll(&self, prompt: &str) -> Result<TokenLoss, GainError>;

    fn suffix_nll(&self, prompt: &str, suffix_start: usize) -> Result<TokenLoss, GainError> {
        let full = self.prompt_nll(prompt)?;
        let prefix = self.prompt_nll(&prompt[..suffix_start])?;
        Ok(TokenLoss {
            total_nll: full.total_nll - prefix.total_nll,
            token_count: full.token_count.saturating_sub(prefix.token_count),
        })
    }
}

/// Whitespace tokens with their byte offsets.
pub fn whitespace_tokens(text: &str) -> Vec<(usize, &str)> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push((s, &text[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push((s, &text[s..]));
    }
    tokens
}

/// Analytic mock: every token carries probability `token_prob`, so the loss
/// of a span of n tokens is exactly `n * ln(1 / token_prob)`.
pub struct UniformMock {
    token_prob: f64,
}

impl UniformMock {
    pub fn new(token_prob: f64) -> Self {
        assert!(token_prob > 0.0 && token_prob <= 1.0);
        UniformMock { token_prob }
    }
}

impl NllBackend for UniformMock {
    fn prompt_nll(&self, prompt: &str) -> Result<TokenLoss, GainError> {
        let n = whitespace_tokens(prompt).len();
        Ok(TokenLoss {
            total_nll: n as f64 * (1.0 / self.token_prob).ln(),
            token_count: n,
        })
    }
}

/// Analytic mock with a causal context effect: a token's probability rises
/// from `base_prob` to `boosted_prob` when `trigger` occurs somewhere before
/// the token in the text.
pub struct TriggerMock {
    base_prob: f64,
    boosted_prob: f64,
    trigger: String,
}

impl TriggerMock {
    pub fn new(base_prob: f64, boosted_prob: f64, trigger: &str) -> Self {
        assert!(base_prob > 0.0 && base_prob <= 1.0);
        assert!(boosted_prob > 0.0 && boosted_prob <= 1.0);
        TriggerMock {
            base_prob,
            boosted_prob,
            trigger: trigger.to_string(),
        }
    }
}

impl NllBackend for TriggerMock {
    fn prompt_nll(&self, prompt: &str) -> Result<TokenLoss, GainError> {
        let boundary = prompt
            .find(&self.trigger)
            .map(|pos| pos + self.trigger.len());
        let mut total = 0.0;
        let mut count = 0;
        for (offset, _) in whitespace_tokens(prompt) {
            let prob = match boundary {
                Some(b) if offset >= b => self.boosted_prob,
                _ => self.base_prob,
            };
            total += (1.0 / prob).ln();
            count += 1;
        }
        Ok(TokenLoss {
            total_nll: total,
            token_count: count,
        })
    }
}

/// White-box gain oracle: marginal gain is the drop in the query record's
/// conditional token loss when the candidate joins the demo set.
pub struct EntropyOracle<B: NllBackend> {
    backend: B,
    template: PromptTemplate,
    cache: Option<Mutex<HashMap<(String, usize), f64>>>,
}

impl<B: NllBackend> EntropyOracle<B> {
    pub fn new(backend: B, template: PromptTemplate) -> Self {
        EntropyOracle {
            backend,
            template,
            cache: Some(Mutex::new(HashMap::new())),
        }
    }

    /// Disables the internal conditional-score cache. Values never change;
    /// only the number of backend calls does.
    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }

    /// Conditional token loss of the query record given the demo set, in
    /// nats. An empty query record scores 0.
    pub fn cond_entropy(&self, query: &Query, demos: &[&InstanceRecord]) -> Result<f64, GainError> {
        let (prompt, span_start) = self.template.scoring_prompt(query, demos)?;
        if let Some(cache) = &self.cache {
            let key = (prompt.clone(), span_start);
            if let Some(&hit) = cache.lock().expect("cache lock").get(&key) {
                return Ok(hit);
            }
            let loss = self.backend.suffix_nll(&prompt, span_start)?;
            cache
                .lock()
                .expect("cache lock")
                .insert(key, loss.total_nll);
            Ok(loss.total_nll)
        } else {
            Ok(self.backend.suffix_nll(&prompt, span_start)?.total_nll)
        }
    }
}

impl<B: NllBackend> GainOracle for EntropyOracle<B> {
    fn evaluate(
        &self,
        query: &Query,
        demos: &[&InstanceRecord],
        candidate: &InstanceRecord,
    ) -> Result<f64, GainError> {
        reject_duplicate_candidate(demos, candidate)?;
        let without = self.cond_entropy(query, demos)?;
        let mut extended: Vec<&InstanceRecord> = demos.to_vec();
        extended.push(candidate);
        let with = self.cond_entropy(query, &extended)?;
        Ok(without - with)
    }

    fn cond_score(
        &self,
        query: &Query,
        demos: &[&InstanceRecord],
    ) -> Result<Option<f64>, GainError> {
        self.cond_entropy(query, demos).map(Some)
    }

    fn identity(&self) -> OracleIdentity {
        OracleIdentity::new("entropy", &format!("task={:?}", self.template.task))
    }
}
