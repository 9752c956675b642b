//! Blocking HTTP client for a hosted language model.
//!
//! Wire format:
//! `POST {base}/score` `{"prompt", "prefix", "top_k"}` -> `{"tokens": {tok: logp}, "eos": logp}`;
//! `POST {base}/complete` `{"prompt", "max_tokens"}` -> `{"text"}`.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{NextTokenDistribution, ScoreError, Scorer};
use crate::prompt::{Prompt, PromptBuilder, PromptConfig, SimilarityIndex, WhitespaceCounter};

pub const DEFAULT_TOKEN_ENV: &str = "RULEWRIGHT_LM_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmEndpointConfig {
    pub base_url: String,
    /// Environment variable holding the bearer token, if any.
    pub token_env: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_secs: f64,
    pub context_window: usize,
    pub top_k: usize,
    pub max_tokens: usize,
}

impl Default for LmEndpointConfig {
    fn default() -> Self {
        LmEndpointConfig {
            base_url: "http://127.0.0.1:8081".into(),
            token_env: Some(DEFAULT_TOKEN_ENV.into()),
            timeout_secs: 30.0,
            max_retries: 2,
            backoff_secs: 0.5,
            context_window: 2048,
            top_k: 50,
            max_tokens: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LmError {
    #[error("invalid endpoint config: {0}")]
    Config(String),
    #[error("endpoint unavailable after {attempts} attempts: {last}")]
    EndpointUnavailable { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
}

impl From<LmError> for ScoreError {
    fn from(e: LmError) -> Self {
        match e {
            LmError::EndpointUnavailable { .. } | LmError::Config(_) => ScoreError::EndpointUnavailable(e.to_string()),
            LmError::MalformedResponse(m) => ScoreError::MalformedResponse(m),
            LmError::Rejected { .. } => ScoreError::Rejected(e.to_string()),
        }
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    prompt: &'a str,
    prefix: &'a [String],
    top_k: usize,
}

#[derive(Deserialize)]
struct ScoreResponse {
    tokens: BTreeMap<String, f64>,
    eos: f64,
}

#[derive(Serialize)]
struct CompleteRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct CompleteResponse {
    text: String,
}

/// Shareable across threads; each call retries independently.
#[derive(Debug)]
pub struct LmClient {
    config: LmEndpointConfig,
    token: Option<String>,
    agent: ureq::Agent,
}

impl LmClient {
    pub fn new(config: LmEndpointConfig) -> Result<Self, LmError> {
        let token = config
            .token_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|t| !t.is_empty());
        Self::with_token(config, token)
    }

    pub fn with_token(config: LmEndpointConfig, token: Option<String>) -> Result<Self, LmError> {
        if !(config.timeout_secs > 0.0 && config.timeout_secs.is_finite()) {
            return Err(LmError::Config("timeout must be positive".into()));
        }
        if !(config.backoff_secs >= 0.0 && config.backoff_secs.is_finite()) {
            return Err(LmError::Config("backoff must be non-negative".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(LmClient { config, token, agent })
    }

    pub fn config(&self) -> &LmEndpointConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn post(&self, path: &str, body: &str) -> Result<String, LmError> {
        let url = self.url(path);
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let wait = self.config.backoff_secs * 2f64.powi(attempt as i32 - 1);
                thread::sleep(Duration::from_secs_f64(wait));
            }
            let mut request = self.agent.post(&url).header("Content-Type", "application/json");
            if let Some(token) = &self.token {
                request = request.header("Authorization", format!("Bearer {token}"));
            }
            match request.send(body) {
                Ok(mut response) => {
                    let status = response.status().as_u16();
                    let text = response.body_mut().read_to_string();
                    match (status, text) {
                        (200..=299, Ok(text)) => return Ok(text),
                        (200..=299, Err(e)) => return Err(LmError::MalformedResponse(e.to_string())),
                        (500..=599, _) => last = format!("status {status}"),
                        (_, text) => {
                            return Err(LmError::Rejected {
                                status,
                                body: text.unwrap_or_default(),
                            })
                        }
                    }
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(LmError::EndpointUnavailable { attempts, last })
    }

    /// Raw next-token log-probabilities for `prefix`, passed through as returned.
    pub fn remote_score_next(&self, prompt: &str, prefix: &[String]) -> Result<NextTokenDistribution, LmError> {
        let body = serde_json::to_string(&ScoreRequest {
            prompt,
            prefix,
            top_k: self.config.top_k,
        })
        .expect("request serializes");
        let text = self.post("score", &body)?;
        let parsed: ScoreResponse =
            serde_json::from_str(&text).map_err(|e| LmError::MalformedResponse(e.to_string()))?;
        if parsed.tokens.values().chain([&parsed.eos]).any(|lp| lp.is_nan() || *lp > 0.0) {
            return Err(LmError::MalformedResponse("log-probabilities must be <= 0".into()));
        }
        Ok(NextTokenDistribution {
            tokens: parsed.tokens,
            eos: parsed.eos,
        })
    }

    /// Completion text up to the first blank line, trimmed.
    pub fn remote_translate(&self, prompt: &str) -> Result<String, LmError> {
        let body = serde_json::to_string(&CompleteRequest {
            prompt,
            max_tokens: self.config.max_tokens,
        })
        .expect("request serializes");
        let text = self.post("complete", &body)?;
        let parsed: CompleteResponse =
            serde_json::from_str(&text).map_err(|e| LmError::MalformedResponse(e.to_string()))?;
        Ok(first_paragraph(&parsed.text))
    }
}

pub fn first_paragraph(text: &str) -> String {
    let mut kept = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if kept.is_empty() {
                continue;
            }
            break;
        }
        kept.push(line);
    }
    kept.join("\n").trim().to_string()
}

/// Few-shot prompt for `source` from the indexed pairs.
pub fn prompt_for(index: &SimilarityIndex, config: &PromptConfig, source: &str) -> Result<Prompt, ScoreError> {
    PromptBuilder::new(index, config, &WhitespaceCounter)
        .build(source)
        .map_err(|e| ScoreError::Rejected(e.to_string()))
}

/// Scorer backed by the remote `/score` endpoint. Distributions are
/// renormalized because endpoints typically return a truncated top-k.
pub struct RemoteScorer {
    client: Arc<LmClient>,
    index: SimilarityIndex,
    prompt: PromptConfig,
    last: Mutex<Option<(String, String)>>,
}

impl RemoteScorer {
    pub fn new(client: Arc<LmClient>, index: SimilarityIndex, prompt: PromptConfig) -> Self {
        RemoteScorer {
            client,
            index,
            prompt,
            last: Mutex::new(None),
        }
    }

    fn prompt_text(&self, source: &str) -> Result<String, ScoreError> {
        let mut last = self.last.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((s, p)) = last.as_ref() {
            if s == source {
                return Ok(p.clone());
            }
        }
        let text = prompt_for(&self.index, &self.prompt, source)?.text;
        *last = Some((source.to_string(), text.clone()));
        Ok(text)
    }
}

impl Scorer for RemoteScorer {
    fn score_next(&self, source: &str, prefix: &[String]) -> Result<NextTokenDistribution, ScoreError> {
        let prompt = self.prompt_text(source)?;
        Ok(self.client.remote_score_next(&prompt, prefix)?.normalized())
    }
}
