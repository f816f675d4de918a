//! Teacher relevance labels: acquisition, an append-only cache, and the
//! in-batch contrastive loss.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sample;
use crate::providers::{GenParams, Providers};
use crate::registry::Evidence;
use crate::retrieval::{cosine_sim, llm_relevance, RetrievalError, ScorerKind};
use crate::templates::PromptTemplates;
use crate::tokens::{quantize_score, RelevanceScore};

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("scorer {0} cannot produce teacher labels (use llm, dense or hard)")]
    UnsupportedScorer(&'static str),
    #[error("no cached score for sample {sample_id}, evidence {evidence_id}")]
    Missing { sample_id: String, evidence_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCacheEntry {
    pub sample_id: String,
    pub evidence_id: String,
    pub score: RelevanceScore,
    pub scorer: ScorerKind,
    pub model: String,
    /// RFC 3339.
    pub timestamp: String,
}

type Key = (String, String, ScorerKind);

/// In-memory view of a cache file, keyed by (sample, evidence, scorer).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelCache {
    entries: BTreeMap<Key, LabelCacheEntry>,
}

impl LabelCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reads a cache file; a missing file is an empty cache. Later lines win
    /// over earlier ones with the same key, and an unterminated last line
    /// (an interrupted append) is ignored.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LabelError> {
        let path = path.as_ref();
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::new()),
            Err(source) => return Err(LabelError::Io { path: path.to_owned(), source }),
        };
        let terminated = text.ends_with('\n');
        let lines: Vec<&str> = text.lines().collect();
        let mut cache = Self::new();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<LabelCacheEntry>(line) {
                Ok(entry) => cache.insert(entry),
                Err(_) if i + 1 == lines.len() && !terminated => {
                    log::warn!("{}: ignoring truncated final line", path.display());
                }
                Err(e) => {
                    return Err(LabelError::Malformed { path: path.to_owned(), line: i + 1, message: e.to_string() })
                }
            }
        }
        Ok(cache)
    }

    pub fn insert(&mut self, entry: LabelCacheEntry) {
        let key = (entry.sample_id.clone(), entry.evidence_id.clone(), entry.scorer);
        self.entries.insert(key, entry);
    }

    pub fn get(&self, sample_id: &str, evidence_id: &str, scorer: ScorerKind) -> Option<&LabelCacheEntry> {
        self.entries.get(&(sample_id.to_owned(), evidence_id.to_owned(), scorer))
    }

    pub fn contains(&self, sample_id: &str, evidence_id: &str, scorer: ScorerKind) -> bool {
        self.get(sample_id, evidence_id, scorer).is_some()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &LabelCacheEntry> {
        self.entries.values()
    }

    /// Writes every entry, replacing the file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LabelError> {
        let path = path.as_ref();
        let io = |source| LabelError::Io { path: path.to_owned(), source };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        for entry in self.entries() {
            writeln!(w, "{}", serde_json::to_string(entry).expect("entry serializes")).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Evidence a sample's labels are computed for: every document of every
/// source in its gold plan, in plan order.
pub fn candidates(sample: &Sample) -> Vec<&Evidence> {
    sample.label_plan.sources().iter().flat_map(|s| sample.registry.docs(s)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelConfig {
    pub scorer: ScorerKind,
    pub params: GenParams,
    /// Fixed timestamp for reproducible cache files; `None` uses the clock.
    pub timestamp: Option<DateTime<Utc>>,
    /// Entries scored between two flushes of the cache file.
    pub chunk_size: usize,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig { scorer: ScorerKind::Hard, params: GenParams::default(), timestamp: None, chunk_size: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFailure {
    pub sample_id: String,
    pub evidence_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub scorer: ScorerKind,
    pub candidates: usize,
    pub skipped_existing: usize,
    pub written: usize,
    pub failures: Vec<LabelFailure>,
}

fn score_one(
    sample: &Sample,
    evidence: &Evidence,
    config: &LabelConfig,
    providers: &Providers,
    templates: &PromptTemplates,
) -> Result<(RelevanceScore, String), RetrievalError> {
    let provider_err = |source| RetrievalError::Provider { evidence_id: evidence.id.clone(), source };
    match config.scorer {
        ScorerKind::Hard => {
            let gold = sample.gold_ids(&evidence.source).contains(&evidence.id);
            let s = if gold { RelevanceScore::ONE } else { RelevanceScore::ZERO };
            Ok((s, "hard-label".to_owned()))
        }
        ScorerKind::Llm => {
            let chat = providers.chat().map_err(provider_err)?;
            let context = templates.render_context(&sample.context);
            let s = llm_relevance(&context, evidence, chat, templates, config.params)?;
            Ok((s, chat.model().to_owned()))
        }
        ScorerKind::Dense => {
            let embedder = providers.embedder().map_err(provider_err)?;
            let q = embedder.embed(&sample.context.query_text()).map_err(RetrievalError::Query)?;
            let v = embedder.embed(&evidence.text).map_err(provider_err)?;
            let c = cosine_sim(&q, &v)
                .map_err(|e| RetrievalError::Cosine { evidence_id: evidence.id.clone(), reason: e.to_string() })?;
            Ok((quantize_score(c.max(0.0)).expect("clamped cosine"), embedder.model().to_owned()))
        }
        other => unreachable!("scorer {} rejected earlier", other.as_str()),
    }
}

/// Scores every missing (sample, candidate) pair and appends the results to
/// `cache_path`. Scoring runs in parallel; one writer appends in corpus
/// order, flushing after every chunk so an interrupted run can resume.
pub fn precompute_labels(
    samples: &[Sample],
    config: &LabelConfig,
    providers: &Providers,
    templates: &PromptTemplates,
    cache_path: impl AsRef<Path>,
) -> Result<LabelSummary, LabelError> {
    if !matches!(config.scorer, ScorerKind::Llm | ScorerKind::Dense | ScorerKind::Hard) {
        return Err(LabelError::UnsupportedScorer(config.scorer.as_str()));
    }
    let path = cache_path.as_ref();
    let existing = LabelCache::load(path)?;
    let all: Vec<(&Sample, &Evidence)> =
        samples.iter().flat_map(|s| candidates(s).into_iter().map(move |e| (s, e))).collect();
    let pending: Vec<(&Sample, &Evidence)> = all
        .iter()
        .copied()
        .filter(|(s, e)| !existing.contains(&s.id, &e.id, config.scorer))
        .collect();
    let mut summary = LabelSummary {
        scorer: config.scorer,
        candidates: all.len(),
        skipped_existing: all.len() - pending.len(),
        written: 0,
        failures: Vec::new(),
    };
    if pending.is_empty() {
        return Ok(summary);
    }

    let io = |source| LabelError::Io { path: path.to_owned(), source };
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    let mut writer = BufWriter::new(file);
    let timestamp = config.timestamp.unwrap_or_else(Utc::now).to_rfc3339_opts(SecondsFormat::Secs, true);
    for chunk in pending.chunks(config.chunk_size.max(1)) {
        let results: Vec<_> =
            chunk.par_iter().map(|(s, e)| score_one(s, e, config, providers, templates)).collect();
        for ((sample, evidence), result) in chunk.iter().zip(results) {
            match result {
                Ok((score, model)) => {
                    let entry = LabelCacheEntry {
                        sample_id: sample.id.clone(),
                        evidence_id: evidence.id.clone(),
                        score,
                        scorer: config.scorer,
                        model,
                        timestamp: timestamp.clone(),
                    };
                    writeln!(writer, "{}", serde_json::to_string(&entry).expect("entry serializes")).map_err(io)?;
                    summary.written += 1;
                }
                Err(e) => summary.failures.push(LabelFailure {
                    sample_id: sample.id.clone(),
                    evidence_id: evidence.id.clone(),
                    error: e.to_string(),
                }),
            }
        }
        writer.flush().map_err(io)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum LossError {
    #[error("contrastive batch has no negatives")]
    NoNegatives,
    #[error("similarity is not finite")]
    NonFinite,
}

/// One query's positive similarity against its in-batch negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveBatch {
    pub positive: f64,
    pub negatives: Vec<f64>,
    /// True when the only negative was drawn from another session.
    #[serde(default)]
    pub substituted: bool,
}

impl ContrastiveBatch {
    pub fn new(positive: f64, negatives: Vec<f64>) -> Result<Self, LossError> {
        if negatives.is_empty() {
            return Err(LossError::NoNegatives);
        }
        Ok(ContrastiveBatch { positive, negatives, substituted: false })
    }

    /// Like `new`, but injects `substitute` when there are no negatives.
    pub fn with_substitute(positive: f64, negatives: Vec<f64>, substitute: f64) -> Self {
        if negatives.is_empty() {
            ContrastiveBatch { positive, negatives: vec![substitute], substituted: true }
        } else {
            ContrastiveBatch { positive, negatives, substituted: false }
        }
    }

    /// Row i of a square similarity matrix: the diagonal is the positive and
    /// the rest of the row are negatives.
    pub fn in_batch(similarities: &[Vec<f64>]) -> Vec<ContrastiveBatch> {
        similarities
            .iter()
            .enumerate()
            .map(|(i, row)| ContrastiveBatch {
                positive: row[i],
                negatives: row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, s)| *s).collect(),
                substituted: false,
            })
            .collect()
    }
}

/// `ln(e^{s+} + sum e^{s-}) - s+`, evaluated with a shifted log-sum-exp.
pub fn nll_loss(batch: &ContrastiveBatch) -> Result<f64, LossError> {
    if batch.negatives.is_empty() {
        return Err(LossError::NoNegatives);
    }
    let all = std::iter::once(batch.positive).chain(batch.negatives.iter().copied());
    if all.clone().any(|x| !x.is_finite()) {
        return Err(LossError::NonFinite);
    }
    let m = all.clone().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + all.map(|x| (x - m).exp()).sum::<f64>().ln();
    Ok((lse - batch.positive).max(0.0))
}

/// Mean loss over a batch of queries.
pub fn mean_nll(batches: &[ContrastiveBatch]) -> Result<f64, LossError> {
    if batches.is_empty() {
        return Err(LossError::NoNegatives);
    }
    let total = batches.iter().map(nll_loss).sum::<Result<f64, _>>()?;
    Ok(total / batches.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_corpus;
    use crate::providers::{FnChat, ProviderError};

    const LN2: f64 = std::f64::consts::LN_2;
    const ONE_VS_ZERO: f64 = 0.313_261_687_518_222_8;

    fn samples() -> Vec<Sample> {
        let line = r#"{"id":"s1","context":[{"role":"user","text":"I want tea"}],"sources":{"PERSONA":{"depends_on":[],"docs":[{"id":"e1","text":"I like tea."},{"id":"e2","text":"I play chess."}]}},"label_plan":["PERSONA"],"label_evidence":{"PERSONA":["e1"]},"response":"Green tea then."}"#;
        let null = r#"{"id":"s2","context":[{"role":"user","text":"hi"}],"sources":{"PERSONA":{"depends_on":[],"docs":[{"id":"e3","text":"x"}]}},"label_plan":[],"label_evidence":{},"response":"hello"}"#;
        parse_corpus(&format!("{line}\n{null}\n")).unwrap()
    }

    fn fixed() -> LabelConfig {
        LabelConfig { timestamp: Some("2024-01-01T00:00:00Z".parse().unwrap()), ..LabelConfig::default() }
    }

    #[test]
    fn loss_closed_forms() {
        let eq = nll_loss(&ContrastiveBatch::new(0.3, vec![0.3]).unwrap()).unwrap();
        assert!((eq - LN2).abs() < 1e-12);
        let l = nll_loss(&ContrastiveBatch::new(1.0, vec![0.0]).unwrap()).unwrap();
        assert!((l - ONE_VS_ZERO).abs() < 1e-9);
        let b4 = nll_loss(&ContrastiveBatch::new(2.0, vec![2.0; 3]).unwrap()).unwrap();
        assert!((b4 - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_decreases_toward_zero() {
        let at = |s: f64| nll_loss(&ContrastiveBatch::new(s, vec![0.2, -0.4]).unwrap()).unwrap();
        assert!(at(1.0) > at(5.0) && at(5.0) > at(10.0));
        assert!(at(10.0) < 1e-3);
        assert!(nll_loss(&ContrastiveBatch::new(1000.0, vec![-1000.0]).unwrap()).unwrap().is_finite());
    }

    #[test]
    fn loss_errors() {
        assert_eq!(ContrastiveBatch::new(1.0, vec![]).unwrap_err(), LossError::NoNegatives);
        let nan = ContrastiveBatch::new(f64::NAN, vec![0.0]).unwrap();
        assert_eq!(nll_loss(&nan).unwrap_err(), LossError::NonFinite);
        let sub = ContrastiveBatch::with_substitute(1.0, vec![], 0.0);
        assert!(sub.substituted);
        assert!((nll_loss(&sub).unwrap() - ONE_VS_ZERO).abs() < 1e-9);
    }

    #[test]
    fn in_batch_rows() {
        let b = ContrastiveBatch::in_batch(&[vec![1.0, 0.0], vec![0.5, 2.0]]);
        assert_eq!(b[0].negatives, vec![0.0]);
        assert_eq!(b[1].positive, 2.0);
        assert_eq!(b[1].negatives, vec![0.5]);
    }

    #[test]
    fn hard_labels_and_idempotent_rerun() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        let t = PromptTemplates::default();
        let s = samples();
        let summary = precompute_labels(&s, &fixed(), &Providers::default(), &t, &path).unwrap();
        assert_eq!((summary.candidates, summary.written), (2, 2));
        let cache = LabelCache::load(&path).unwrap();
        assert_eq!(cache.get("s1", "e1", ScorerKind::Hard).unwrap().score, RelevanceScore::ONE);
        assert_eq!(cache.get("s1", "e2", ScorerKind::Hard).unwrap().score, RelevanceScore::ZERO);
        assert_eq!(cache.get("s1", "e1", ScorerKind::Hard).unwrap().timestamp, "2024-01-01T00:00:00Z");

        let again = precompute_labels(&s, &fixed(), &Providers::default(), &t, &path).unwrap();
        assert_eq!((again.written, again.skipped_existing), (0, 2));
    }

    #[test]
    fn llm_failure_is_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        let chat = FnChat(|req: &crate::providers::ChatRequest| {
            if req.last_user().contains("chess") {
                Err(ProviderError::Status { status: 400, body: "bad".into() })
            } else {
                Ok("0.74".to_owned())
            }
        });
        let providers = Providers::default().with_chat(chat);
        let cfg = LabelConfig { scorer: ScorerKind::Llm, ..fixed() };
        let summary = precompute_labels(&samples(), &cfg, &providers, &PromptTemplates::default(), &path).unwrap();
        assert_eq!(summary.written, 1);
        assert_eq!(summary.failures.len(), 1);
        assert_eq!(summary.failures[0].evidence_id, "e2");
        let cache = LabelCache::load(&path).unwrap();
        assert_eq!(cache.get("s1", "e1", ScorerKind::Llm).unwrap().score.tenths(), 7);
    }

    #[test]
    fn cache_round_trip_last_writer_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let entry = |score: u8| LabelCacheEntry {
            sample_id: "s".into(),
            evidence_id: "e".into(),
            score: RelevanceScore::from_tenths(score).unwrap(),
            scorer: ScorerKind::Dense,
            model: "m".into(),
            timestamp: "2024-01-01T00:00:00Z".into(),
        };
        let mut cache = LabelCache::new();
        cache.insert(entry(3));
        cache.save(&path).unwrap();
        assert_eq!(LabelCache::load(&path).unwrap(), cache);

        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str(&serde_json::to_string(&entry(9)).unwrap());
        text.push_str("\n{\"sample_id\":\"s\",\"evid");
        std::fs::write(&path, text).unwrap();
        let loaded = LabelCache::load(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded.get("s", "e", ScorerKind::Dense).unwrap().score.tenths(), 9);

        std::fs::write(&path, "garbage\n").unwrap();
        assert!(matches!(LabelCache::load(&path), Err(LabelError::Malformed { line: 1, .. })));
        assert!(LabelCache::load(dir.path().join("missing.jsonl")).unwrap().is_empty());
    }

    #[test]
    fn unsupported_scorer() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = LabelConfig { scorer: ScorerKind::Bm25, ..fixed() };
        let err = precompute_labels(&samples(), &cfg, &Providers::default(), &PromptTemplates::default(), dir.path().join("x"));
        assert!(matches!(err, Err(LabelError::UnsupportedScorer("bm25"))));
    }
}
