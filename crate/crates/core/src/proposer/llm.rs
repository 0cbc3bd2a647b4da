use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{parse_feature_sources, FeatureCandidate, Message, ProposalContext, Proposer, ProposerError};

pub const API_KEY_ENV: &str = "LEAPR_API_KEY";
pub const API_BASE_ENV: &str = "LEAPR_API_BASE";

const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    /// Base URL of an OpenAI-compatible API; `None` reads `LEAPR_API_BASE`.
    pub api_base: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_attempts: u32,
    /// Delay before the first retry; doubles after each failed attempt.
    pub backoff_initial_ms: u64,
    pub request_timeout_secs: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            api_base: None,
            model: "gpt-4o-mini".into(),
            temperature: 1.0,
            max_attempts: 3,
            backoff_initial_ms: 1000,
            request_timeout_secs: 120,
        }
    }
}

/// Chat-completions client. The bearer token comes from `LEAPR_API_KEY`; it
/// is omitted when unset, which suits local inference servers.
pub struct LlmBackend {
    config: LlmConfig,
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

enum Attempt {
    Retry(String),
    Fatal(ProposerError),
}

impl LlmBackend {
    pub fn new(config: LlmConfig) -> Result<Self, ProposerError> {
        let base = config
            .api_base
            .clone()
            .or_else(|| std::env::var(API_BASE_ENV).ok())
            .unwrap_or_else(|| DEFAULT_API_BASE.to_string());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout_secs))
            .build()
            .map_err(|e| ProposerError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(LlmBackend {
            endpoint: format!("{}/chat/completions", base.trim_end_matches('/')),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            config,
            client,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn attempt(&self, body: &Value) -> Result<String, Attempt> {
        let mut request = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(ProposerError::Http {
                status: status.as_u16(),
                body: text,
            }));
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| Attempt::Fatal(ProposerError::MalformedResponse(e.to_string())))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Attempt::Fatal(ProposerError::MalformedResponse("no choices[0].message.content".into())))
    }

    /// One chat completion, retried with exponential backoff on transport
    /// errors, 429 and 5xx answers.
    pub fn complete(&self, messages: &[Message]) -> Result<String, ProposerError> {
        let body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
        });
        let attempts = self.config.max_attempts.max(1);
        let mut delay = Duration::from_millis(self.config.backoff_initial_ms);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(&body) {
                Ok(content) => return Ok(content),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(message)) => {
                    log::warn!("completion attempt {attempt}/{attempts} failed: {message}");
                    last = message;
                    if attempt < attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(ProposerError::Transport {
            attempts,
            message: last,
        })
    }
}

impl Proposer for LlmBackend {
    fn propose(
        &mut self,
        ctx: &ProposalContext,
        messages: &[Message],
        batch_size: usize,
    ) -> Result<Vec<FeatureCandidate>, ProposerError> {
        let text = self.complete(messages)?;
        let mut candidates = parse_feature_sources(&text);
        if candidates.is_empty() {
            log::warn!(
                "{} iteration {}: response contained no code blocks",
                ctx.mode_name(),
                ctx.iteration
            );
        }
        candidates.truncate(batch_size);
        Ok(candidates)
    }
}
