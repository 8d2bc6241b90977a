//! OpenAI-compatible chat-completions client with bounded retries.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse};

/// Env var providing the bearer token.
pub const API_KEY_ENV: &str = "MASSRAG_API_KEY";
/// Env var providing the base URL when the config omits it.
pub const BASE_URL_ENV: &str = "MASSRAG_BASE_URL";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key: Option<String>,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub request_timeout: Duration,
}

impl HttpConfig {
    /// Resolve base URL and credentials, falling back to the environment.
    pub fn resolve(base_url: Option<String>, model_name: String) -> Result<Self, BackendError> {
        let base_url = base_url
            .or_else(|| std::env::var(BASE_URL_ENV).ok())
            .ok_or_else(|| {
                BackendError::Config(format!("no base URL configured and {BASE_URL_ENV} unset"))
            })?;
        Ok(HttpConfig {
            base_url,
            model_name,
            api_key: std::env::var(API_KEY_ENV).ok(),
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
            request_timeout: Duration::from_secs(120),
        })
    }
}

#[derive(Deserialize)]
struct CompletionMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<CompletionChoice>,
    usage: Option<Usage>,
}

/// Remote endpoint speaking POST {base_url}/chat/completions.
pub struct HttpBackend {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.request_timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(HttpBackend { cfg, client })
    }

    fn attempt(&self, req: &ChatRequest) -> Result<ChatResponse, AttemptError> {
        let mut messages = Vec::new();
        if !req.system_prompt.is_empty() {
            messages.push(json!({"role": "system", "content": req.system_prompt}));
        }
        messages.push(json!({"role": "user", "content": req.user_prompt}));
        let body = json!({
            "model": req.model_name,
            "messages": messages,
            "temperature": req.decode.temperature,
            "top_p": req.decode.top_p,
            "max_tokens": req.decode.max_tokens,
        });
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let mut request = self.client.post(&url).json(&body);
        if let Some(key) = &self.cfg.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| AttemptError::Retryable(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| AttemptError::Retryable(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Retryable(format!(
                "HTTP {status}: {}",
                excerpt(&text)
            )));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(BackendError::Endpoint {
                status: status.as_u16(),
                body_excerpt: excerpt(&text),
            }));
        }
        let parsed: CompletionBody = serde_json::from_str(&text).map_err(|e| {
            AttemptError::Fatal(BackendError::Endpoint {
                status: status.as_u16(),
                body_excerpt: format!("unparseable body ({e}): {}", excerpt(&text)),
            })
        })?;
        let content = parsed
            .choices
            .first()
            .and_then(|c| c.message.content.clone())
            .unwrap_or_default();
        if content.is_empty() {
            return Err(AttemptError::Fatal(BackendError::EmptyCompletion));
        }
        let usage = parsed.usage;
        Ok(ChatResponse {
            text: content,
            prompt_tokens: usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: usage.as_ref().and_then(|u| u.completion_tokens),
            from_cache: false,
        })
    }
}

enum AttemptError {
    Retryable(String),
    Fatal(BackendError),
}

fn excerpt(body: &str) -> String {
    const LIMIT: usize = 300;
    let trimmed = body.trim();
    if trimmed.len() <= LIMIT {
        trimmed.to_string()
    } else {
        let mut end = LIMIT;
        while !trimmed.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &trimmed[..end])
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut backoff = self.cfg.initial_backoff;
        let mut last_message = String::new();
        for attempt in 1..=self.cfg.max_attempts {
            match self.attempt(req) {
                Ok(resp) => return Ok(resp),
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Retryable(message)) => {
                    last_message = message;
                    if attempt < self.cfg.max_attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(BackendError::Transport {
            attempts: self.cfg.max_attempts,
            message: last_message,
        })
    }

    fn fingerprint(&self) -> String {
        format!("http:{}@{}", self.cfg.model_name, self.cfg.base_url)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn excerpt_truncates_long_bodies() {
        let long = "x".repeat(1000);
        let e = excerpt(&long);
        assert!(e.len() < 320);
        assert!(e.ends_with("..."));
    }

    #[test]
    fn resolve_fails_without_base_url() {
        std::env::remove_var(BASE_URL_ENV);
        assert!(HttpConfig::resolve(None, "m".into()).is_err());
    }
}
