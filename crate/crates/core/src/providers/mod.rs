//! Interfaces to the learned components: the chat model, the embedder, and
//! the consistency (NLI) scorer. Each has an HTTP client and deterministic
//! mocks.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::fnv1a64;

pub mod http;
pub mod mock;
mod rate;

pub use http::{HttpChat, HttpEmbedder, HttpNli, ProviderConfig};
pub use mock::{ConstantNli, FnChat, FnNli, HashEmbedder, OverlapNli, PrefixChat, ScriptedChat, ScriptedNli};
pub use rate::RateLimiter;

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_TOP_P: f64 = 0.1;
pub const DEFAULT_MAX_TOKENS: u32 = 512;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("response has no choices")]
    EmptyChoices,
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("no scripted reply for prompt key {key}")]
    Unscripted { key: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("environment variable {0} holding the auth token is not set")]
    MissingAuth(String),
    #[error("no {0} provider configured")]
    NotConfigured(&'static str),
}

impl ProviderError {
    /// Whether a retry may succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::Transport(_) | ProviderError::Timeout => true,
            ProviderError::Status { status, .. } => *status >= 500 || *status == 429 || *status == 408,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message { role: "user".into(), content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: "assistant".into(), content: content.into() }
    }
}

/// Sampling parameters for one call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams { temperature: DEFAULT_TEMPERATURE, top_p: DEFAULT_TOP_P, max_tokens: DEFAULT_MAX_TOKENS }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ProviderError::InvalidInput(format!("temperature {} < 0", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ProviderError::InvalidInput(format!("top_p {} not in (0, 1]", self.top_p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    #[serde(flatten)]
    pub params: GenParams,
}

impl ChatRequest {
    pub fn new(messages: Vec<Message>, params: GenParams) -> Result<Self, ProviderError> {
        if messages.is_empty() {
            return Err(ProviderError::InvalidInput("chat request has no messages".into()));
        }
        params.validate()?;
        Ok(ChatRequest { messages, params })
    }

    /// The prompt as a mock sees it: one `role: content` block per message.
    pub fn rendered_prompt(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(&m.role);
            out.push_str(": ");
            out.push_str(&m.content);
            out.push('\n');
        }
        out
    }

    /// Stable key of the rendered prompt (16 hex digits of FNV-1a 64).
    pub fn prompt_key(&self) -> String {
        prompt_key(&self.rendered_prompt())
    }

    /// Text of the last user message.
    pub fn last_user(&self) -> &str {
        self.messages.iter().rev().find(|m| m.role == "user").map(|m| m.content.as_str()).unwrap_or("")
    }
}

pub fn prompt_key(rendered: &str) -> String {
    format!("{:016x}", fnv1a64(rendered.as_bytes()))
}

/// Dense vector with a fixed per-provider dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

pub trait ChatProvider: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError>;

    fn model(&self) -> &str {
        "mock"
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;

    fn model(&self) -> &str {
        "mock"
    }
}

/// Entailment probability of `hypothesis` given `premise`.
pub trait NliScorer: Send + Sync {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ProviderError>;

    fn model(&self) -> &str {
        "mock"
    }
}

pub(crate) fn require_text(what: &str, text: &str) -> Result<(), ProviderError> {
    if text.is_empty() {
        Err(ProviderError::InvalidInput(format!("{what} must be non-empty")))
    } else {
        Ok(())
    }
}

/// The providers a pipeline run may use. Stages ask for what they need.
#[derive(Clone, Default)]
pub struct Providers {
    pub chat: Option<Arc<dyn ChatProvider>>,
    pub embedder: Option<Arc<dyn EmbeddingProvider>>,
    pub nli: Option<Arc<dyn NliScorer>>,
}

impl fmt::Debug for Providers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Providers")
            .field("chat", &self.chat.as_ref().map(|c| c.model().to_string()))
            .field("embedder", &self.embedder.as_ref().map(|c| c.model().to_string()))
            .field("nli", &self.nli.as_ref().map(|c| c.model().to_string()))
            .finish()
    }
}

impl Providers {
    pub fn with_chat(mut self, chat: impl ChatProvider + 'static) -> Self {
        self.chat = Some(Arc::new(chat));
        self
    }

    pub fn with_embedder(mut self, embedder: impl EmbeddingProvider + 'static) -> Self {
        self.embedder = Some(Arc::new(embedder));
        self
    }

    pub fn with_nli(mut self, nli: impl NliScorer + 'static) -> Self {
        self.nli = Some(Arc::new(nli));
        self
    }

    pub fn chat(&self) -> Result<&dyn ChatProvider, ProviderError> {
        self.chat.as_deref().ok_or(ProviderError::NotConfigured("chat"))
    }

    pub fn embedder(&self) -> Result<&dyn EmbeddingProvider, ProviderError> {
        self.embedder.as_deref().ok_or(ProviderError::NotConfigured("embedding"))
    }

    pub fn nli(&self) -> Result<&dyn NliScorer, ProviderError> {
        self.nli.as_deref().ok_or(ProviderError::NotConfigured("nli"))
    }
}
