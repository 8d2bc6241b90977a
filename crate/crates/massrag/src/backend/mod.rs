//! Uniform chat-completion interface.
//!
//! Three implementations: a remote OpenAI-compatible HTTP endpoint, a
//! deterministic scripted mock for offline tests, and a caching wrapper
//! that makes large runs resumable and replayable.

mod cache;
mod http;
mod mock;

pub use cache::CachedBackend;
pub use http::{HttpBackend, HttpConfig};
pub use mock::MockBackend;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::core::DecodeParams;

/// Routing metadata attached to a request so the scripted mock can answer
/// by (role, query_id) lookup. Not part of the cache key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteTag {
    pub role: String,
    pub query_id: String,
}

/// One chat-completion request: a single user message plus an optional
/// system message.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub decode: DecodeParams,
    pub model_name: String,
    pub route: Option<RouteTag>,
}

impl ChatRequest {
    /// Digest of (model_name, system_prompt, user_prompt, decode). Identical
    /// inputs give identical keys; any field change gives a different key.
    pub fn cache_key(&self) -> CacheKey {
        let mut hasher = Sha256::new();
        for part in [&self.model_name, &self.system_prompt, &self.user_prompt] {
            hasher.update((part.len() as u64).to_le_bytes());
            hasher.update(part.as_bytes());
        }
        hasher.update(self.decode.temperature.to_le_bytes());
        hasher.update(self.decode.top_p.to_le_bytes());
        hasher.update(self.decode.max_tokens.to_le_bytes());
        CacheKey(hex::encode(hasher.finalize()))
    }
}

/// Hex digest identifying a request for caching and replay.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey(pub String);

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Completion text plus usage accounting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub from_cache: bool,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body_excerpt}")]
    Endpoint { status: u16, body_excerpt: String },
    #[error("endpoint returned an empty completion")]
    EmptyCompletion,
    #[error("mock script {path} line {line}: {message}")]
    ScriptParse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("cache store error: {0}")]
    Cache(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
}

/// A chat-completion backend. Implementations must be shareable across
/// concurrent tasks.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError>;

    /// Short string identifying the backend and model for run manifests.
    fn fingerprint(&self) -> String;
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(req)
    }

    fn fingerprint(&self) -> String {
        (**self).fingerprint()
    }
}
