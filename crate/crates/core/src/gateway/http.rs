//! Chat-completions client for OpenAI-compatible servers (vLLM, FastChat,
//! hosted APIs).

use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{BackendConfig, ChatBackend, GatewayError};
use crate::prompt::{ChatMessage, PromptBundle};

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f32,
    max_tokens: u32,
    stream: bool,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct HttpBackend {
    cfg: BackendConfig,
    url: String,
    client: reqwest::Client,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fail(GatewayError),
}

impl HttpBackend {
    pub fn new(cfg: BackendConfig) -> Result<Self, GatewayError> {
        let endpoint = cfg
            .endpoint
            .as_deref()
            .ok_or_else(|| GatewayError::InvalidConfig("http backend requires an endpoint".into()))?
            .trim()
            .trim_end_matches('/');
        let url = if endpoint.ends_with("/chat/completions") {
            endpoint.to_string()
        } else {
            format!("{endpoint}/chat/completions")
        };
        let client = reqwest::Client::builder()
            .build()
            .map_err(|e| GatewayError::InvalidConfig(e.to_string()))?;
        Ok(HttpBackend { cfg, url, client })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    async fn attempt(&self, bundle: &PromptBundle, budget: Duration) -> Attempt {
        let body = ChatRequest {
            model: &self.cfg.model,
            messages: &bundle.turns,
            temperature: self.cfg.temperature,
            max_tokens: self.cfg.max_tokens,
            stream: false,
        };
        let mut req = self.client.post(&self.url).timeout(budget).json(&body);
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key.expose());
        }
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(transport_message(e)),
        };
        let status = resp.status();
        if status.is_server_error() {
            return Attempt::Retry(format!("server error {status}"));
        }
        if status.is_client_error() {
            let text = resp.text().await.unwrap_or_default();
            return Attempt::Fail(GatewayError::Rejected {
                status: status.as_u16(),
                message: text.chars().take(300).collect(),
            });
        }
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(transport_message(e)),
        };
        match serde_json::from_str::<ChatResponse>(&text) {
            Ok(parsed) => match parsed.choices.into_iter().next() {
                Some(choice) => {
                    let content = choice.message.content.unwrap_or_default();
                    if content.trim().is_empty() {
                        Attempt::Fail(GatewayError::EmptyCompletion)
                    } else {
                        Attempt::Done(content)
                    }
                }
                None => Attempt::Fail(GatewayError::EmptyCompletion),
            },
            Err(e) => Attempt::Fail(GatewayError::MalformedResponse(e.to_string())),
        }
    }
}

/// Transport error text without the request URL.
fn transport_message(e: reqwest::Error) -> String {
    let kind = if e.is_timeout() {
        "timed out"
    } else if e.is_connect() {
        "connection failed"
    } else {
        "transport error"
    };
    format!("{kind}: {}", e.without_url())
}

#[async_trait]
impl ChatBackend for HttpBackend {
    async fn complete(&self, bundle: &PromptBundle) -> Result<String, GatewayError> {
        let deadline = Instant::now() + self.cfg.timeout;
        let mut attempts = 0;
        let mut delay = self.cfg.backoff;
        loop {
            attempts += 1;
            let budget = deadline.saturating_duration_since(Instant::now());
            if budget.is_zero() {
                return Err(GatewayError::Unavailable {
                    attempts: attempts - 1,
                    message: "timed out".into(),
                });
            }
            debug!(attempt = attempts, "chat completion request");
            let last = match self.attempt(bundle, budget).await {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(msg) => msg,
            };
            if attempts > self.cfg.retries {
                return Err(GatewayError::Unavailable {
                    attempts,
                    message: last,
                });
            }
            warn!(attempt = attempts, error = %last, "retrying chat completion");
            let remaining = deadline.saturating_duration_since(Instant::now());
            tokio::time::sleep(delay.min(remaining)).await;
            delay *= 2;
        }
    }
}
