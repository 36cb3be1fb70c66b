//! OpenAI-compatible chat-completions client with retry and backoff.
//!
//! Sends `{model, messages:[{role:"user", content}], temperature, max_tokens}`
//! to the configured endpoint and reads the first choice's message content.
//! HTTP 429, 5xx, timeouts, and connection failures are retried with
//! exponential backoff up to `max_retries`; 401/403 fail immediately.

use std::time::Duration;

use serde_json::json;

use super::{Backend, CompletionOutcome, CompletionRequest, LlmError};

const DEFAULT_BACKOFF_BASE: Duration = Duration::from_millis(250);
const BACKOFF_CAP: Duration = Duration::from_secs(8);

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    backoff_base: Duration,
}

impl HttpBackend {
    pub fn new() -> HttpBackend {
        HttpBackend {
            client: reqwest::blocking::Client::new(),
            backoff_base: DEFAULT_BACKOFF_BASE,
        }
    }

    /// Override the first backoff delay; tests use a near-zero base.
    pub fn with_backoff_base(mut self, base: Duration) -> HttpBackend {
        self.backoff_base = base;
        self
    }

    fn backoff_delay(&self, retry_index: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry_index);
        self.backoff_base.saturating_mul(factor).min(BACKOFF_CAP)
    }
}

impl Default for HttpBackend {
    fn default() -> Self {
        HttpBackend::new()
    }
}

enum Failure {
    Transient(String),
    Fatal(LlmError),
}

fn classify_status(status: reqwest::StatusCode, body: &str) -> Failure {
    if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
        return Failure::Fatal(LlmError::Auth(format!("status {status}")));
    }
    if status == reqwest::StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
        return Failure::Transient(format!("status {status}"));
    }
    Failure::Fatal(LlmError::Http(format!(
        "status {status}: {}",
        body.chars().take(200).collect::<String>()
    )))
}

impl Backend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionOutcome, LlmError> {
        let cfg = &request.config;
        cfg.validate()?;
        if cfg.endpoint_url.trim().is_empty() {
            return Err(LlmError::InvalidConfig("endpoint_url is empty".into()));
        }
        let token = match &cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                LlmError::Auth(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let body = json!({
            "model": cfg.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        });

        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let mut builder = self
                .client
                .post(&cfg.endpoint_url)
                .timeout(cfg.timeout())
                .json(&body);
            if let Some(token) = &token {
                builder = builder.bearer_auth(token);
            }

            let failure = match builder.send() {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        let payload: serde_json::Value = response
                            .json()
                            .map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
                        let text = payload["choices"][0]["message"]["content"]
                            .as_str()
                            .ok_or_else(|| {
                                LlmError::MalformedResponse(
                                    "missing choices[0].message.content".into(),
                                )
                            })?;
                        return Ok(CompletionOutcome {
                            text: text.to_string(),
                            attempts,
                            from_cache: false,
                        });
                    }
                    let body = response.text().unwrap_or_default();
                    classify_status(status, &body)
                }
                Err(e) if e.is_timeout() || e.is_connect() => Failure::Transient(e.to_string()),
                Err(e) => Failure::Fatal(LlmError::Http(e.to_string())),
            };

            match failure {
                Failure::Fatal(err) => return Err(err),
                Failure::Transient(last) => {
                    if attempts > cfg.max_retries {
                        return Err(LlmError::TransientExhausted { attempts, last });
                    }
                    std::thread::sleep(self.backoff_delay(attempts - 1));
                }
            }
        }
    }
}
