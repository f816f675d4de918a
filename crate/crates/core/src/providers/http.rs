//! Clients for servers speaking the common chat-completion wire format.
//!
//! * chat: `POST {endpoint}/chat/completions`, reply in `choices[0].message.content`
//! * embeddings: `POST {endpoint}/embeddings`, vector in `data[0].embedding`
//! * nli: `POST {endpoint}/nli` with `{"model", "premise", "hypothesis"}`,
//!   probability in `entailment`

use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::rate::RateLimiter;
use super::{require_text, ChatProvider, ChatRequest, EmbeddingProvider, EmbeddingVector, NliScorer, ProviderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Base delay; attempt `k` waits `backoff_secs * 2^k`.
    pub backoff_secs: f64,
    pub requests_per_sec: Option<f64>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            auth_env: None,
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_secs: 0.5,
            requests_per_sec: None,
        }
    }
}

impl ProviderConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        ProviderConfig { endpoint: endpoint.into(), model: model.into(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(format!("timeout_secs must be > 0, got {}", self.timeout_secs));
        }
        if self.backoff_secs.is_nan() || self.backoff_secs < 0.0 {
            return Err(format!("backoff_secs must be >= 0, got {}", self.backoff_secs));
        }
        if let Some(r) = self.requests_per_sec {
            if r.is_nan() || r <= 0.0 {
                return Err(format!("requests_per_sec must be > 0, got {r}"));
            }
        }
        if self.endpoint.is_empty() {
            return Err("endpoint is empty".into());
        }
        Ok(())
    }
}

/// One HTTP attempt as recorded in a provider's call log.
#[derive(Debug, Clone, PartialEq)]
pub struct CallAttempt {
    pub path: String,
    pub attempt: u32,
    pub error: Option<ProviderError>,
}

/// Runs `op` until it succeeds, fails permanently, or `max_retries` retries
/// are used up. `op` receives the zero-based attempt number.
pub fn with_retries<T>(
    max_retries: u32,
    backoff_secs: f64,
    mut op: impl FnMut(u32) -> Result<T, ProviderError>,
) -> Result<T, ProviderError> {
    let mut attempt = 0;
    loop {
        match op(attempt) {
            Ok(v) => return Ok(v),
            Err(e) if e.is_transient() && attempt < max_retries => {
                let delay = backoff_secs * f64::from(1u32 << attempt.min(16));
                if delay > 0.0 {
                    thread::sleep(Duration::from_secs_f64(delay));
                }
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

struct HttpClient {
    config: ProviderConfig,
    agent: ureq::Agent,
    limiter: Option<RateLimiter>,
    log: Mutex<Vec<CallAttempt>>,
}

impl HttpClient {
    fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        config.validate().map_err(ProviderError::InvalidInput)?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = config.requests_per_sec.map(RateLimiter::new);
        Ok(HttpClient { config, agent, limiter, log: Mutex::new(Vec::new()) })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    fn auth_header(&self) -> Result<Option<String>, ProviderError> {
        match &self.config.auth_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(|token| Some(format!("Bearer {token}")))
                .map_err(|_| ProviderError::MissingAuth(var.clone())),
        }
    }

    fn post_once(&self, url: &str, body: &Value, auth: Option<&str>) -> Result<Value, ProviderError> {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(a) = auth {
            req = req.header("Authorization", a);
        }
        let mut resp = req.send_json(body).map_err(map_ureq)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(map_ureq)?;
        if !(200..300).contains(&status) {
            return Err(ProviderError::Status { status, body: truncate(&text, 512) });
        }
        serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(e.to_string()))
    }

    fn post(&self, path: &str, body: Value) -> Result<Value, ProviderError> {
        let url = self.url(path);
        let auth = self.auth_header()?;
        with_retries(self.config.max_retries, self.config.backoff_secs, |attempt| {
            let result = self.post_once(&url, &body, auth.as_deref());
            self.log.lock().expect("log poisoned").push(CallAttempt {
                path: path.to_string(),
                attempt,
                error: result.as_ref().err().cloned(),
            });
            result
        })
    }

    fn calls(&self) -> Vec<CallAttempt> {
        self.log.lock().expect("log poisoned").clone()
    }
}

fn map_ureq(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => ProviderError::Timeout,
        other => ProviderError::Transport(other.to_string()),
    }
}

fn truncate(s: &str, max: usize) -> String {
    s.chars().take(max).collect()
}

macro_rules! http_provider {
    ($name:ident) => {
        impl $name {
            pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
                Ok($name { client: HttpClient::new(config)? })
            }

            /// Every attempt made so far, including retries.
            pub fn calls(&self) -> Vec<CallAttempt> {
                self.client.calls()
            }

            pub fn config(&self) -> &ProviderConfig {
                &self.client.config
            }
        }
    };
}

pub struct HttpChat {
    client: HttpClient,
}
http_provider!(HttpChat);

impl ChatProvider for HttpChat {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.client.config.model,
            "messages": req.messages,
            "temperature": req.params.temperature,
            "top_p": req.params.top_p,
            "max_tokens": req.params.max_tokens,
        });
        let resp = self.client.post("chat/completions", body)?;
        let choices = resp
            .get("choices")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Malformed("missing choices".into()))?;
        let first = choices.first().ok_or(ProviderError::EmptyChoices)?;
        first
            .pointer("/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Malformed("choices[0].message.content missing".into()))
    }

    fn model(&self) -> &str {
        &self.client.config.model
    }
}

pub struct HttpEmbedder {
    client: HttpClient,
}
http_provider!(HttpEmbedder);

impl EmbeddingProvider for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        require_text("embedding input", text)?;
        let body = json!({ "model": self.client.config.model, "input": text });
        let resp = self.client.post("embeddings", body)?;
        let values = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Malformed("data[0].embedding missing".into()))?;
        values
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| ProviderError::Malformed("non-numeric embedding entry".into())))
            .collect::<Result<Vec<_>, _>>()
            .map(EmbeddingVector)
    }

    fn model(&self) -> &str {
        &self.client.config.model
    }
}

pub struct HttpNli {
    client: HttpClient,
}
http_provider!(HttpNli);

impl NliScorer for HttpNli {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ProviderError> {
        require_text("premise", premise)?;
        require_text("hypothesis", hypothesis)?;
        let body = json!({ "model": self.client.config.model, "premise": premise, "hypothesis": hypothesis });
        let resp = self.client.post("nli", body)?;
        let p = resp
            .get("entailment")
            .and_then(Value::as_f64)
            .ok_or_else(|| ProviderError::Malformed("entailment missing".into()))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(ProviderError::Malformed(format!("entailment {p} outside [0, 1]")));
        }
        Ok(p)
    }

    fn model(&self) -> &str {
        &self.client.config.model
    }
}
