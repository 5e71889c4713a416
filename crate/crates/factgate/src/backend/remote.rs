//! Remote completion backend.
//!
//! Speaks the OpenAI-compatible completion shape: a JSON POST with `model`,
//! `prompt`, `max_tokens`, `temperature`, and `logprobs`; the response must
//! carry per-token text/logprob pairs under
//! `choices[0].logprobs.top_logprobs[0]`. Transient failures (429, 5xx,
//! transport errors) are retried with exponential backoff up to a configured
//! limit; 401/403 fail immediately.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendRequest, TokenDistribution, TokenLogprob};

/// Credential environment variable.
pub const ENV_API_KEY: &str = "FACTGATE_API_KEY";
/// Endpoint environment variable (a CLI flag takes precedence).
pub const ENV_API_URL: &str = "FACTGATE_API_URL";

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub api_key: String,
    pub model_id: String,
    /// Retries after the first attempt; transient failures only.
    pub max_retries: u32,
    /// First backoff delay; doubles per retry. Rate-limit responses that
    /// name a retry-after delay use that instead.
    pub backoff_base: Duration,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: impl Into<String>,
        model_id: impl Into<String>,
    ) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            model_id: model_id.into(),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }

    /// Read endpoint and credential from the environment; an explicit
    /// `endpoint` argument (CLI flag) wins over `FACTGATE_API_URL`.
    pub fn from_env(model_id: impl Into<String>, endpoint: Option<String>) -> Result<Self, BackendError> {
        let endpoint = endpoint
            .or_else(|| std::env::var(ENV_API_URL).ok())
            .ok_or_else(|| BackendError::Transport(format!("no endpoint: set {ENV_API_URL} or pass a flag")))?;
        let api_key = std::env::var(ENV_API_KEY)
            .map_err(|_| BackendError::Auth(format!("{ENV_API_KEY} is not set")))?;
        Ok(RemoteConfig::new(endpoint, api_key, model_id))
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    logprobs: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    #[serde(default)]
    text: String,
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    top_logprobs: Vec<BTreeMap<String, f64>>,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(RemoteBackend { config, client })
    }

    fn attempt(&self, request: &BackendRequest) -> Result<TokenDistribution, BackendError> {
        let body = WireRequest {
            model: &self.config.model_id,
            prompt: &request.prompt,
            max_tokens: request.max_tokens,
            temperature: request.temperature,
            logprobs: request.want_top_logprobs,
        };
        let response = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(&self.config.api_key)
            .json(&body)
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        match status {
            200 => {
                let text = response.text().map_err(|e| BackendError::Transport(e.to_string()))?;
                parse_completion_response(&text, request)
            }
            401 | 403 => Err(BackendError::Auth(format!("http {status}"))),
            429 => {
                let retry_after = response
                    .headers()
                    .get("retry-after")
                    .and_then(|v| v.to_str().ok())
                    .and_then(|s| s.parse::<f64>().ok());
                Err(BackendError::RateLimited { retry_after })
            }
            _ => {
                let body = response.text().unwrap_or_default();
                Err(BackendError::Transport(format!("http {status}: {}", excerpt(&body))))
            }
        }
    }
}

fn excerpt(body: &str) -> String {
    body.chars().take(200).collect()
}

fn retryable(err: &BackendError) -> bool {
    match err {
        BackendError::RateLimited { .. } => true,
        BackendError::Transport(msg) => {
            // 4xx other than 401/403/429 are not transient.
            !msg.starts_with("http 4")
        }
        _ => false,
    }
}

/// Parse an OpenAI-compatible completion body into a token distribution.
///
/// Single-token scoring requests require a logprobs block; multi-token
/// completion requests may omit it, in which case only the generated text
/// is kept.
pub fn parse_completion_response(
    body: &str,
    request: &BackendRequest,
) -> Result<TokenDistribution, BackendError> {
    let parsed: WireResponse = serde_json::from_str(body)
        .map_err(|e| BackendError::UnparseableResponse(format!("{e}; body: {}", excerpt(body))))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::UnparseableResponse(format!("no choices; body: {}", excerpt(body))))?;
    let top = choice.logprobs.and_then(|lp| lp.top_logprobs.into_iter().next());
    match top {
        Some(map) => {
            let entries: Vec<TokenLogprob> = map
                .into_iter()
                .map(|(token, logprob)| TokenLogprob { token, logprob })
                .collect();
            TokenDistribution::new(entries, choice.text)
        }
        None if request.max_tokens <= 1 => Err(BackendError::UnparseableResponse(format!(
            "response lacks a logprobs block; body: {}",
            excerpt(body)
        ))),
        None => TokenDistribution::new(Vec::new(), choice.text),
    }
}

impl Backend for RemoteBackend {
    fn id(&self) -> &str {
        "remote"
    }

    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn query(&self, request: &BackendRequest) -> Result<TokenDistribution, BackendError> {
        request.validate()?;
        let mut last_err = None;
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let delay = match last_err {
                    Some(BackendError::RateLimited { retry_after: Some(secs) }) => {
                        Duration::from_secs_f64(secs.max(0.0))
                    }
                    _ => self.config.backoff_base * 2u32.pow(attempt - 1),
                };
                std::thread::sleep(delay);
            }
            match self.attempt(request) {
                Ok(dist) => return Ok(dist),
                Err(err) if retryable(&err) => last_err = Some(err),
                Err(err) => return Err(err),
            }
        }
        Err(last_err.expect("at least one attempt"))
    }
}
