//! Chat-completion backends behind one interface.

mod http;
mod mock;

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use tokio::sync::Semaphore;

use crate::prompt::PromptBundle;

pub use http::HttpBackend;
pub use mock::{MockBackend, MockRule, MockScript, MockScriptError};

pub const ENV_ENDPOINT: &str = "XNLP_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "XNLP_LLM_API_KEY";
pub const ENV_MODEL: &str = "XNLP_LLM_MODEL";
pub const ENV_TEMPERATURE: &str = "XNLP_LLM_TEMPERATURE";
pub const ENV_BACKEND: &str = "XNLP_BACKEND";
pub const ENV_MOCK_SCRIPT: &str = "XNLP_MOCK_SCRIPT";

pub const DEFAULT_MODEL: &str = "vicuna-13b";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Http,
    Mock,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "http" => Ok(BackendKind::Http),
            "mock" => Ok(BackendKind::Mock),
            other => Err(format!("unknown backend `{other}` (expected http or mock)")),
        }
    }
}

/// An API key. Never printed.
#[derive(Clone, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        ApiKey(key.into())
    }

    pub(crate) fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(***)")
    }
}

#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Base URL (e.g. `http://localhost:8000/v1`) or full `/chat/completions` URL.
    pub endpoint: Option<String>,
    pub api_key: Option<ApiKey>,
    pub model: String,
    pub temperature: f32,
    pub max_tokens: u32,
    /// Ceiling on one completion call, retries included.
    pub timeout: Duration,
    pub retries: u32,
    /// First retry delay; doubles per attempt.
    pub backoff: Duration,
    pub max_concurrent: usize,
    /// Mock script file; the bundled script is used when absent.
    pub mock_script: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: None,
            api_key: None,
            model: DEFAULT_MODEL.into(),
            temperature: 0.0,
            max_tokens: 1024,
            timeout: Duration::from_secs(60),
            retries: 2,
            backoff: Duration::from_millis(250),
            max_concurrent: 8,
            mock_script: None,
        }
    }
}

impl BackendConfig {
    /// Defaults overridden by the `XNLP_*` environment variables.
    pub fn from_env() -> Result<Self, GatewayError> {
        let mut cfg = Self::default();
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), GatewayError> {
        let var = |k: &str| var(k).filter(|v| !v.trim().is_empty());
        if let Some(e) = var(ENV_ENDPOINT) {
            self.endpoint = Some(e);
            self.kind = BackendKind::Http;
        }
        if let Some(k) = var(ENV_API_KEY) {
            self.api_key = Some(ApiKey::new(k));
        }
        if let Some(m) = var(ENV_MODEL) {
            self.model = m;
        }
        if let Some(t) = var(ENV_TEMPERATURE) {
            self.temperature = t
                .trim()
                .parse()
                .map_err(|_| GatewayError::InvalidConfig(format!("{ENV_TEMPERATURE} is not a number")))?;
        }
        if let Some(b) = var(ENV_BACKEND) {
            self.kind = b.parse().map_err(GatewayError::InvalidConfig)?;
        }
        if let Some(p) = var(ENV_MOCK_SCRIPT) {
            self.mock_script = Some(PathBuf::from(p));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidConfig(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.timeout.is_zero() {
            return Err(GatewayError::InvalidConfig("timeout must be positive".into()));
        }
        if self.max_concurrent == 0 {
            return Err(GatewayError::InvalidConfig("concurrency cap must be positive".into()));
        }
        if self.kind == BackendKind::Http && self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
            return Err(GatewayError::InvalidConfig("http backend requires an endpoint".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("backend rejected the request with status {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
    #[error("empty prompt")]
    EmptyPrompt,
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn complete(&self, bundle: &PromptBundle) -> Result<String, GatewayError>;
}

/// A backend plus a cap on concurrent in-flight calls.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    limiter: Arc<Semaphore>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("available_permits", &self.limiter.available_permits())
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, max_concurrent: usize) -> Self {
        Gateway {
            backend,
            limiter: Arc::new(Semaphore::new(max_concurrent.max(1))),
        }
    }

    pub fn from_config(cfg: &BackendConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let backend: Arc<dyn ChatBackend> = match cfg.kind {
            BackendKind::Http => Arc::new(HttpBackend::new(cfg.clone())?),
            BackendKind::Mock => {
                let script = match &cfg.mock_script {
                    Some(path) => MockScript::load(path)
                        .map_err(|e| GatewayError::InvalidConfig(e.to_string()))?,
                    None => MockScript::bundled(),
                };
                Arc::new(MockBackend::new(script))
            }
        };
        Ok(Self::new(backend, cfg.max_concurrent))
    }

    pub fn mock(script: MockScript) -> Self {
        Self::new(Arc::new(MockBackend::new(script)), 8)
    }

    /// Sends the conversation and returns the assistant's reply.
    pub async fn complete(&self, bundle: &PromptBundle) -> Result<String, GatewayError> {
        if bundle.turns.is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        let _permit = self
            .limiter
            .acquire()
            .await
            .map_err(|_| GatewayError::Unavailable {
                attempts: 0,
                message: "gateway closed".into(),
            })?;
        let text = self.backend.complete(bundle).await?;
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyCompletion);
        }
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn config_validation() {
        let mut cfg = BackendConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.temperature = 2.5;
        assert!(cfg.validate().is_err());
        cfg.temperature = 0.0;
        cfg.kind = BackendKind::Http;
        assert!(cfg.validate().is_err());
        cfg.endpoint = Some("http://localhost:1/v1".into());
        assert!(cfg.validate().is_ok());
        cfg.timeout = Duration::ZERO;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn env_overrides() {
        let env: HashMap<&str, &str> = [
            (ENV_ENDPOINT, "http://127.0.0.1:9/v1"),
            (ENV_API_KEY, "sk-secret-value"),
            (ENV_MODEL, "gpt-x"),
            (ENV_TEMPERATURE, "0.7"),
        ]
        .into();
        let mut cfg = BackendConfig::default();
        cfg.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(cfg.kind, BackendKind::Http);
        assert_eq!(cfg.model, "gpt-x");
        assert!((cfg.temperature - 0.7).abs() < 1e-6);
        assert!(!format!("{cfg:?}").contains("sk-secret-value"));

        let env: HashMap<&str, &str> = [(ENV_ENDPOINT, "http://x"), (ENV_BACKEND, "mock")].into();
        let mut cfg = BackendConfig::default();
        cfg.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(cfg.kind, BackendKind::Mock);
    }
}
