//! Backends that turn a prompt into model text: a remote chat-completion
//! client, deterministic test doubles, and a response cache.

mod cache;
mod http;

pub use cache::{with_cache, CacheBackend};
pub use http::HttpBackend;

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("transient failures exhausted after {attempts} attempts: {last}")]
    TransientExhausted { attempts: u32, last: String },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("http error: {0}")]
    Http(String),
    #[error("scripted backend exhausted after {0} responses")]
    ScriptExhausted(usize),
    #[error("cache entry corrupt at {path}: {reason}")]
    CacheCorrupt { path: String, reason: String },
    #[error("cache io error at {path}: {source}")]
    CacheIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
}

/// Connection settings for one judge or generator model.
///
/// The credential is named by `api_key_env` and read from the environment at
/// call time; it never appears in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub model_id: String,
    #[serde(default)]
    pub endpoint_url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

fn default_temperature() -> f64 {
    0.7
}

fn default_max_tokens() -> u32 {
    2048
}

fn default_timeout_s() -> f64 {
    60.0
}

fn default_max_retries() -> u32 {
    3
}

impl LlmConfig {
    /// Offline config with the default sampling settings, used by tests and
    /// the demo.
    pub fn offline(model_id: impl Into<String>) -> LlmConfig {
        LlmConfig {
            model_id: model_id.into(),
            endpoint_url: String::new(),
            api_key_env: None,
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            timeout_s: default_timeout_s(),
            max_retries: default_max_retries(),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.model_id.trim().is_empty() {
            return Err(LlmError::InvalidConfig("model_id is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidConfig(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens < 1 {
            return Err(LlmError::InvalidConfig("max_tokens must be >= 1".into()));
        }
        if !self.timeout_s.is_finite() || self.timeout_s <= 0.0 {
            return Err(LlmError::InvalidConfig(format!(
                "timeout_s {} must be positive",
                self.timeout_s
            )));
        }
        Ok(())
    }
}

/// One prompt plus the model settings used to answer it.
#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub prompt: String,
    pub config: LlmConfig,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>, config: LlmConfig) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.into(),
            config,
        }
    }
}

/// Model text plus bookkeeping: `attempts` is the number of requests issued
/// (0 on a cache hit).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionOutcome {
    pub text: String,
    pub attempts: u32,
    pub from_cache: bool,
}

/// A prompt-in, text-out completion source. Implementations must be safe
/// for concurrent `complete` calls.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionOutcome, LlmError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionOutcome, LlmError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionOutcome, LlmError> {
        (**self).complete(request)
    }
}

/// Validate and dispatch a completion request.
pub fn complete(
    backend: &dyn Backend,
    request: &CompletionRequest,
) -> Result<CompletionOutcome, LlmError> {
    if request.prompt.trim().is_empty() {
        return Err(LlmError::EmptyPrompt);
    }
    backend.complete(request)
}

/// Test double that replays a fixed list of responses in order and errors
/// once the script runs out.
pub struct ScriptedBackend {
    script: Mutex<VecDeque<String>>,
    total: usize,
    calls: AtomicU64,
}

impl ScriptedBackend {
    pub fn new<S: Into<String>>(script: impl IntoIterator<Item = S>) -> ScriptedBackend {
        let script: VecDeque<String> = script.into_iter().map(Into::into).collect();
        ScriptedBackend {
            total: script.len(),
            script: Mutex::new(script),
            calls: AtomicU64::new(0),
        }
    }

    /// Number of `complete` calls served so far (exhausted calls included).
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, _request: &CompletionRequest) -> Result<CompletionOutcome, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let next = self.script.lock().expect("script lock").pop_front();
        match next {
            Some(text) => Ok(CompletionOutcome {
                text,
                attempts: 1,
                from_cache: false,
            }),
            None => Err(LlmError::ScriptExhausted(self.total)),
        }
    }
}

/// Test double computing the response from the request, for cases where a
/// fixed script is too rigid (for example keyed on prompt content).
pub struct CallbackBackend {
    f: Box<dyn Fn(&CompletionRequest) -> Result<String, LlmError> + Send + Sync>,
}

impl CallbackBackend {
    pub fn new(
        f: impl Fn(&CompletionRequest) -> Result<String, LlmError> + Send + Sync + 'static,
    ) -> CallbackBackend {
        CallbackBackend { f: Box::new(f) }
    }
}

impl Backend for CallbackBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionOutcome, LlmError> {
        (self.f)(request).map(|text| CompletionOutcome {
            text,
            attempts: 1,
            from_cache: false,
        })
    }
}

/// Wrapper counting how many calls actually reach the inner backend.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicU64,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> CountingBackend<B> {
        CountingBackend {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: Backend> Backend for CountingBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionOutcome, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(prompt: &str) -> CompletionRequest {
        CompletionRequest::new(prompt, LlmConfig::offline("test-model"))
    }

    #[test]
    fn scripted_backend_replays_in_order_then_exhausts() {
        let backend = ScriptedBackend::new(["a", "b"]);
        assert_eq!(complete(&backend, &request("p")).unwrap().text, "a");
        assert_eq!(complete(&backend, &request("p")).unwrap().text, "b");
        assert!(matches!(
            complete(&backend, &request("p")),
            Err(LlmError::ScriptExhausted(2))
        ));
        assert_eq!(backend.calls(), 3);
    }

    #[test]
    fn scripted_backend_single_response_shape() {
        let backend = ScriptedBackend::new(["hello"]);
        let outcome = complete(&backend, &request("p")).unwrap();
        assert_eq!(outcome.text, "hello");
        assert_eq!(outcome.attempts, 1);
        assert!(!outcome.from_cache);
    }

    #[test]
    fn replayed_script_gives_identical_sequence() {
        let run = || {
            let backend = ScriptedBackend::new(["x", "y", "z"]);
            (0..3)
                .map(|_| complete(&backend, &request("p")).unwrap().text)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_prompt_is_rejected_before_dispatch() {
        let backend = ScriptedBackend::new(["unused"]);
        assert!(matches!(
            complete(&backend, &request("   ")),
            Err(LlmError::EmptyPrompt)
        ));
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = LlmConfig::offline("m");
        cfg.temperature = 2.5;
        assert!(cfg.validate().is_err());
        cfg.temperature = 0.8;
        cfg.max_tokens = 0;
        assert!(cfg.validate().is_err());
        cfg.max_tokens = 16;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn config_json_defaults_match_documented_values() {
        let cfg: LlmConfig = serde_json::from_str(
            r#"{"model_id":"gpt-judge","endpoint_url":"http://localhost:1/v1/chat/completions"}"#,
        )
        .unwrap();
        assert_eq!(cfg.temperature, 0.7);
        assert_eq!(cfg.max_tokens, 2048);
        assert_eq!(cfg.max_retries, 3);
    }
}
