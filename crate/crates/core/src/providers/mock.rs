//! Deterministic providers for hermetic tests and dry runs.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;

use super::{
    prompt_key, require_text, ChatProvider, ChatRequest, EmbeddingProvider, EmbeddingVector, NliScorer,
    ProviderError,
};
use crate::hash::Fnv1a;
use crate::text::{tokenize, TokenizerMode};

/// Chat mock keyed on [`ChatRequest::prompt_key`].
///
/// Strict by default: an unscripted prompt is an error. Every request is
/// recorded in the call log.
#[derive(Debug, Default)]
pub struct ScriptedChat {
    replies: HashMap<String, String>,
    fallback: Option<String>,
    log: Mutex<Vec<ChatRequest>>,
}

#[derive(Deserialize)]
struct ScriptLine {
    key: Option<String>,
    prompt: Option<String>,
    reply: String,
}

impl ScriptedChat {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replies `reply` whenever the rendered prompt hashes to `key`.
    pub fn with_key(mut self, key: impl Into<String>, reply: impl Into<String>) -> Self {
        self.replies.insert(key.into(), reply.into());
        self
    }

    pub fn with_request(self, req: &ChatRequest, reply: impl Into<String>) -> Self {
        self.with_key(req.prompt_key(), reply)
    }

    pub fn insert(&mut self, key: impl Into<String>, reply: impl Into<String>) {
        self.replies.insert(key.into(), reply.into());
    }

    /// Answers unscripted prompts with `reply` instead of failing.
    pub fn lenient(mut self, reply: impl Into<String>) -> Self {
        self.fallback = Some(reply.into());
        self
    }

    /// Loads `{"key": ..., "reply": ...}` or `{"prompt": ..., "reply": ...}`
    /// lines, where `prompt` is the rendered prompt text.
    pub fn from_script_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut chat = ScriptedChat::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry: ScriptLine = serde_json::from_str(line).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("script line {}: {e}", n + 1))
            })?;
            let key = match (entry.key, entry.prompt) {
                (Some(k), _) => k,
                (None, Some(p)) => prompt_key(&p),
                (None, None) => {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("script line {} needs key or prompt", n + 1),
                    ))
                }
            };
            chat.insert(key, entry.reply);
        }
        Ok(chat)
    }

    pub fn calls(&self) -> Vec<ChatRequest> {
        self.log.lock().expect("log poisoned").clone()
    }
}

impl ChatProvider for ScriptedChat {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        self.log.lock().expect("log poisoned").push(req.clone());
        let key = req.prompt_key();
        match self.replies.get(&key).or(self.fallback.as_ref()) {
            Some(reply) => Ok(reply.clone()),
            None => Err(ProviderError::Unscripted { key }),
        }
    }
}

/// Chat mock that answers with the reply of the longest registered prefix
/// of the last user message, e.g. the rendered context of a sample mapped
/// to its reference response.
#[derive(Debug, Default)]
pub struct PrefixChat {
    entries: Vec<(String, String)>,
    fallback: Option<String>,
}

impl PrefixChat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, prefix: impl Into<String>, reply: impl Into<String>) -> Self {
        self.entries.push((prefix.into(), reply.into()));
        self
    }

    pub fn lenient(mut self, reply: impl Into<String>) -> Self {
        self.fallback = Some(reply.into());
        self
    }
}

impl ChatProvider for PrefixChat {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        let text = req.last_user();
        self.entries
            .iter()
            .filter(|(p, _)| text.starts_with(p.as_str()))
            .max_by_key(|(p, _)| p.len())
            .map(|(_, r)| r.clone())
            .or_else(|| self.fallback.clone())
            .ok_or_else(|| ProviderError::Unscripted { key: req.prompt_key() })
    }
}

/// Chat mock backed by a closure.
pub struct FnChat<F>(pub F);

impl<F> ChatProvider for FnChat<F>
where
    F: Fn(&ChatRequest) -> Result<String, ProviderError> + Send + Sync,
{
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        (self.0)(req)
    }
}

/// Feature-hashing embedder over character n-grams.
///
/// For every n in `1..=max_n` and every window of n characters, the hash
/// `h = fnv1a64(seed.to_le_bytes() ++ [n] ++ utf8(window))` adds `+1` to
/// bucket `h % dim` when the top bit of `h` is clear, `-1` otherwise.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
    pub max_n: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: 256, seed: 0, max_n: 3 }
    }
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "dimension must be positive");
        HashEmbedder { dim, seed, ..Self::default() }
    }

    /// `(bucket, sign)` for one n-gram.
    pub fn feature(&self, n: usize, window: &str) -> (usize, f64) {
        let h = Fnv1a::default()
            .update(&self.seed.to_le_bytes())
            .update(&[n as u8])
            .update(window.as_bytes())
            .finish();
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        ((h % self.dim as u64) as usize, sign)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        require_text("embedding input", text)?;
        let chars: Vec<char> = text.chars().collect();
        let mut v = vec![0.0; self.dim];
        let mut window = String::new();
        for n in 1..=self.max_n.min(chars.len()) {
            for w in chars.windows(n) {
                window.clear();
                window.extend(w);
                let (bucket, sign) = self.feature(n, &window);
                v[bucket] += sign;
            }
        }
        Ok(EmbeddingVector(v))
    }

    fn model(&self) -> &str {
        "hash-ngram"
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantNli(pub f64);

impl NliScorer for ConstantNli {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ProviderError> {
        require_text("premise", premise)?;
        require_text("hypothesis", hypothesis)?;
        Ok(self.0)
    }

    fn model(&self) -> &str {
        "constant"
    }
}

/// Looks up `(premise, hypothesis)` pairs; unlisted pairs get the default or
/// fail.
#[derive(Debug, Default, Clone)]
pub struct ScriptedNli {
    table: HashMap<(String, String), f64>,
    default: Option<f64>,
}

impl ScriptedNli {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, premise: &str, hypothesis: &str, score: f64) -> Self {
        self.table.insert((premise.to_string(), hypothesis.to_string()), score);
        self
    }

    pub fn or_default(mut self, score: f64) -> Self {
        self.default = Some(score);
        self
    }
}

impl NliScorer for ScriptedNli {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ProviderError> {
        require_text("premise", premise)?;
        require_text("hypothesis", hypothesis)?;
        self.table
            .get(&(premise.to_string(), hypothesis.to_string()))
            .copied()
            .or(self.default)
            .ok_or_else(|| ProviderError::Unscripted { key: format!("{premise:?} => {hypothesis:?}") })
    }

    fn model(&self) -> &str {
        "scripted"
    }
}

/// `|premise tokens ∩ hypothesis tokens| / |hypothesis tokens|` over token sets.
#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapNli {
    pub mode: TokenizerMode,
}

impl NliScorer for OverlapNli {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ProviderError> {
        require_text("premise", premise)?;
        require_text("hypothesis", hypothesis)?;
        let p: std::collections::HashSet<String> = tokenize(premise, self.mode).into_iter().collect();
        let h: std::collections::HashSet<String> = tokenize(hypothesis, self.mode).into_iter().collect();
        if h.is_empty() {
            return Ok(0.0);
        }
        Ok(h.intersection(&p).count() as f64 / h.len() as f64)
    }

    fn model(&self) -> &str {
        "overlap"
    }
}

/// NLI mock backed by a closure.
pub struct FnNli<F>(pub F);

impl<F> NliScorer for FnNli<F>
where
    F: Fn(&str, &str) -> Result<f64, ProviderError> + Send + Sync,
{
    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ProviderError> {
        (self.0)(premise, hypothesis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{GenParams, Message};

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new(vec![Message::user(text)], GenParams::default()).unwrap()
    }

    #[test]
    fn scripted_chat_replies_and_logs() {
        let r = req("plan this");
        let chat = ScriptedChat::new().with_request(&r, "NULL");
        assert_eq!(chat.chat(&r).unwrap(), "NULL");
        assert!(matches!(chat.chat(&req("other")), Err(ProviderError::Unscripted { .. })));
        assert_eq!(chat.calls().len(), 2);
        let lenient = ScriptedChat::new().lenient("ok");
        assert_eq!(lenient.chat(&req("anything")).unwrap(), "ok");
    }

    #[test]
    fn script_file_accepts_keys_and_prompts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.jsonl");
        let r = req("hello");
        let line2 = serde_json::json!({"prompt": r.rendered_prompt(), "reply": "by prompt"});
        fs::write(&path, format!("{{\"key\":\"abc\",\"reply\":\"by key\"}}\n{line2}\n")).unwrap();
        let chat = ScriptedChat::from_script_file(&path).unwrap();
        assert_eq!(chat.chat(&r).unwrap(), "by prompt");
    }

    #[test]
    fn hash_embedder_is_deterministic() {
        let e = HashEmbedder::default();
        let a = e.embed("I love hiking").unwrap();
        let b = e.embed("I love hiking").unwrap();
        assert_eq!(a.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.dim(), 256);
        assert!(e.embed("").is_err());
        let other_seed = HashEmbedder::new(256, 7).embed("I love hiking").unwrap();
        assert_ne!(a, other_seed);
    }

    #[test]
    fn nli_mocks() {
        let s = ScriptedNli::new().with("e1", "r", 0.9);
        assert_eq!(s.score("e1", "r").unwrap(), 0.9);
        assert!(s.score("e2", "r").is_err());
        let o = OverlapNli::default();
        assert_eq!(o.score("the cat sat", "the cat sat").unwrap(), 1.0);
        assert_eq!(o.score("the cat sat", "dogs bark").unwrap(), 0.0);
        assert_eq!(o.score("the cat", "the dog").unwrap(), 0.5);
        assert!(o.score("", "x").is_err());
        assert_eq!(ConstantNli(0.3).score("a", "b").unwrap(), 0.3);
    }

    #[test]
    fn prefix_chat_prefers_longest_prefix() {
        let chat = PrefixChat::new().with("User: a\n", "short").with("User: a\nSystem: b\n", "long");
        let req = |t: &str| ChatRequest { messages: vec![super::super::Message::user(t)], params: Default::default() };
        assert_eq!(chat.chat(&req("User: a\nSystem: b\nUser: c")).unwrap(), "long");
        assert_eq!(chat.chat(&req("User: a\nUser: c")).unwrap(), "short");
        assert!(chat.chat(&req("other")).is_err());
    }
}
