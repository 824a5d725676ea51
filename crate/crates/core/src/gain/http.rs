//! HTTP backends speaking the completions/chat wire protocol.
//!
//! The entropy backend POSTs to `{base_url}/v1/completions` with
//! `max_tokens: 0`, `echo: true`, `logprobs: 1` and sums per-token negative
//! logprobs over the requested span using the returned text offsets. The
//! chat backend POSTs to `{base_url}/v1/chat/completions` and returns the
//! first message's content. Transport and HTTP failures are retried three
//! times with exponential backoff before surfacing as unavailability.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::entropy::{NllBackend, TokenLoss};
use super::{ChatBackend, GainError};

#[derive(Debug, Clone)]
pub struct HttpLmConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key, if any.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    /// Bounds concurrent in-flight requests across threads.
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub retry_base_ms: u64,
}

impl HttpLmConfig {
    pub fn new(base_url: &str, model: &str) -> Self {
        HttpLmConfig {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key_env: None,
            timeout_secs: 30,
            max_in_flight: 8,
            max_attempts: 3,
            retry_base_ms: 250,
        }
    }
}

// Counting semaphore for the in-flight bound.
struct Gate {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(permits: usize) -> Self {
        Gate {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut permits = self.permits.lock().expect("gate lock");
        while *permits == 0 {
            permits = self.cv.wait(permits).expect("gate wait");
        }
        *permits -= 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.gate.permits.lock().expect("gate lock") += 1;
        self.gate.cv.notify_one();
    }
}

fn post_json(
    agent: &ureq::Agent,
    cfg: &HttpLmConfig,
    gate: &Gate,
    path: &str,
    body: serde_json::Value,
) -> Result<serde_json::Value, GainError> {
    let url = format!("{}{}", cfg.base_url, path);
    let mut last_reason = String::new();
    for attempt in 0..cfg.max_attempts {
        if attempt > 0 {
            let backoff = cfg.retry_base_ms.saturating_mul(1 << (attempt - 1));
            std::thread::sleep(Duration::from_millis(backoff));
        }
        let _permit = gate.acquire();
        let mut request = agent.post(&url);
        if let Some(env_name) = &cfg.api_key_env {
            if let Ok(key) = std::env::var(env_name) {
                request = request.set("Authorization", &format!("Bearer {key}"));
            }
        }
        match request.send_json(body.clone()) {
            Ok(response) => {
                return response
                    .into_json()
                    .map_err(|e| GainError::Protocol(format!("invalid JSON response: {e}")));
            }
            Err(ureq::Error::Status(code, _)) => {
                last_reason = format!("HTTP {code} from {url}");
            }
            Err(ureq::Error::Transport(t)) => {
                last_reason = format!("transport error to {url}: {t}");
            }
        }
    }
    Err(GainError::Unavailable {
        attempts: cfg.max_attempts,
        reason: last_reason,
    })
}

#[derive(Deserialize)]
struct CompletionsResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    logprobs: Option<LogprobsPayload>,
}

#[derive(Deserialize)]
struct LogprobsPayload {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    text_offset: Vec<usize>,
}

/// Completions-with-echo backend producing token losses.
pub struct HttpCompletionsBackend {
    cfg: HttpLmConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl HttpCompletionsBackend {
    pub fn new(cfg: HttpLmConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build();
        let gate = Gate::new(cfg.max_in_flight);
        HttpCompletionsBackend { cfg, agent, gate }
    }

    pub fn config(&self) -> &HttpLmConfig {
        &self.cfg
    }

    fn echoed_logprobs(&self, prompt: &str) -> Result<LogprobsPayload, GainError> {
        let body = json!({
            "model": self.cfg.model,
            "prompt": prompt,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 1,
        });
        let value = post_json(&self.agent, &self.cfg, &self.gate, "/v1/completions", body)?;
        let parsed: CompletionsResponse = serde_json::from_value(value)
            .map_err(|e| GainError::Protocol(format!("malformed completions response: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GainError::Protocol("response has no choices".into()))?;
        let logprobs = choice
            .logprobs
            .ok_or_else(|| GainError::Protocol("response carries no logprobs".into()))?;
        if logprobs.tokens.len() != logprobs.token_logprobs.len()
            || logprobs.tokens.len() != logprobs.text_offset.len()
        {
            return Err(GainError::Protocol(
                "logprobs arrays have mismatched lengths".into(),
            ));
        }
        Ok(logprobs)
    }

    fn sum_span(payload: &LogprobsPayload, from_offset: usize) -> TokenLoss {
        let mut total = 0.0;
        let mut count = 0;
        for (i, &offset) in payload.text_offset.iter().enumerate() {
            if offset < from_offset {
                continue;
            }
            if let Some(lp) = payload.token_logprobs[i] {
                total -= lp;
            }
            count += 1;
        }
        TokenLoss {
            total_nll: total,
            token_count: count,
        }
    }
}

impl NllBackend for HttpCompletionsBackend {
    fn prompt_nll(&self, prompt: &str) -> Result<TokenLoss, GainError> {
        let payload = self.echoed_logprobs(prompt)?;
        Ok(Self::sum_span(&payload, 0))
    }

    fn suffix_nll(&self, prompt: &str, suffix_start: usize) -> Result<TokenLoss, GainError> {
        if prompt[suffix_start..].trim().is_empty() {
            return Ok(TokenLoss {
                total_nll: 0.0,
                token_count: 0,
            });
        }
        let payload = self.echoed_logprobs(prompt)?;
        Ok(Self::sum_span(&payload, suffix_start))
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

/// Chat-completions backend for the black-box scorer.
pub struct HttpChatBackend {
    cfg: HttpLmConfig,
    agent: ureq::Agent,
    gate: Gate,
}

impl HttpChatBackend {
    pub fn new(cfg: HttpLmConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build();
        let gate = Gate::new(cfg.max_in_flight);
        HttpChatBackend { cfg, agent, gate }
    }
}

impl ChatBackend for HttpChatBackend {
    fn chat(&self, prompt: &str) -> Result<String, GainError> {
        let body = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let value = post_json(
            &self.agent,
            &self.cfg,
            &self.gate,
            "/v1/chat/completions",
            body,
        )?;
        let parsed: ChatResponse = serde_json::from_value(value)
            .map_err(|e| GainError::Protocol(format!("malformed chat response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| GainError::Protocol("chat response has no choices".into()))
    }
}
