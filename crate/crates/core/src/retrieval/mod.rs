//! Evidence scoring and ranking within planned sources, and
//! dependency-aware retrieval across a plan.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::Plan;
use crate::providers::{GenParams, ProviderError, Providers};
use crate::registry::{DialogueContext, Evidence, SourceId, SourceRegistry};
use crate::templates::PromptTemplates;
use crate::text::TokenizerMode;
use crate::tokens::{quantize_score, RelevanceScore};

pub mod bm25;
pub mod dense;
pub mod llm;
pub mod recall;

pub use bm25::{bm25_build, Bm25Index, Bm25Params};
pub use dense::cosine_sim;
pub use llm::{llm_relevance, parse_relevance};
pub use recall::{recall_at_k, RankedQuery, RecallReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RetrievalError {
    #[error("evidence pool is empty")]
    EmptyPool,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity of a zero vector")]
    ZeroVector,
    #[error("scoring evidence {evidence_id}: {source}")]
    Provider { evidence_id: String, source: ProviderError },
    #[error("embedding the query: {0}")]
    Query(ProviderError),
    #[error("reply for evidence {evidence_id} contains no score in [0, 1]: {reply:?}")]
    UnparseableScore { evidence_id: String, reply: String },
    #[error("cosine for evidence {evidence_id}: {reason}")]
    Cosine { evidence_id: String, reason: String },
    #[error("{source_name} depends on {dependency}, which yielded no evidence")]
    Chain { source_name: String, dependency: String },
    #[error("k must be at least 1")]
    InvalidK,
}

/// Where a relevance score came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Bm25,
    Dense,
    Llm,
    /// Predicted by the generator itself.
    #[serde(rename = "self")]
    SelfScored,
    /// 1.0 for gold evidence, 0.0 otherwise, taken from the labels.
    Oracle,
    /// Hard labels written by label precomputation.
    Hard,
}

impl ScorerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScorerKind::Bm25 => "bm25",
            ScorerKind::Dense => "dense",
            ScorerKind::Llm => "llm",
            ScorerKind::SelfScored => "self",
            ScorerKind::Oracle => "oracle",
            ScorerKind::Hard => "hard",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "bm25" => ScorerKind::Bm25,
            "dense" => ScorerKind::Dense,
            "llm" => ScorerKind::Llm,
            "self" => ScorerKind::SelfScored,
            "oracle" => ScorerKind::Oracle,
            "hard" => ScorerKind::Hard,
            _ => return None,
        })
    }
}

/// A retrieved evidence and its grid score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEvidence {
    pub evidence: Evidence,
    pub score: RelevanceScore,
    pub scorer: ScorerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub scorer: ScorerKind,
    pub top_n: usize,
    pub tokenizer: TokenizerMode,
    pub bm25: Bm25Params,
    /// Restrict a dependent source's pool to documents linked to the
    /// prerequisite's top evidence (falls back to the full pool when no
    /// document is linked).
    pub hard_filter: bool,
    pub params: GenParams,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            scorer: ScorerKind::Bm25,
            top_n: 1,
            tokenizer: TokenizerMode::CharCjk,
            bm25: Bm25Params::default(),
            hard_filter: false,
            params: GenParams::default(),
        }
    }
}

/// What a scorer may need besides the query and the pool.
#[derive(Debug, Clone, Copy)]
pub struct Scoring<'a> {
    pub providers: &'a Providers,
    pub templates: &'a PromptTemplates,
    /// Gold evidence ids; only the oracle scorer reads them.
    pub gold: Option<&'a BTreeMap<SourceId, Vec<String>>>,
}

pub(crate) fn sort_ranked(items: &mut [(String, f64)]) {
    items.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
}

/// Raw value used for ranking, and the grid score emitted with it.
fn score_pool(
    query: &str,
    pool: &[Evidence],
    config: &RetrievalConfig,
    scoring: &Scoring<'_>,
) -> Result<Vec<(f64, RelevanceScore)>, RetrievalError> {
    match config.scorer {
        ScorerKind::Bm25 => {
            let index = bm25_build(pool, config.tokenizer, config.bm25)?;
            let raw: Vec<f64> = index.score(query).into_iter().map(|(_, s)| s).collect();
            let max = raw.iter().copied().fold(0.0, f64::max);
            Ok(raw
                .into_iter()
                .map(|s| {
                    let norm = if max > 0.0 { (s / max).clamp(0.0, 1.0) } else { 0.0 };
                    (s, quantize_score(norm).expect("normalized"))
                })
                .collect())
        }
        ScorerKind::Dense => {
            let embedder = scoring.providers.embedder().map_err(RetrievalError::Query)?;
            let q = embedder.embed(query).map_err(RetrievalError::Query)?;
            pool.par_iter()
                .map(|e| {
                    let v = embedder
                        .embed(&e.text)
                        .map_err(|source| RetrievalError::Provider { evidence_id: e.id.clone(), source })?;
                    let c = cosine_sim(&q, &v).map_err(|err| RetrievalError::Cosine {
                        evidence_id: e.id.clone(),
                        reason: err.to_string(),
                    })?;
                    Ok((c, quantize_score(c.max(0.0)).expect("clamped cosine")))
                })
                .collect()
        }
        ScorerKind::Llm | ScorerKind::SelfScored => {
            let chat = scoring
                .providers
                .chat()
                .map_err(|source| RetrievalError::Provider { evidence_id: String::new(), source })?;
            pool.par_iter()
                .map(|e| {
                    let s = llm_relevance(query, e, chat, scoring.templates, config.params)?;
                    Ok((s.value(), s))
                })
                .collect()
        }
        ScorerKind::Oracle | ScorerKind::Hard => Ok(pool
            .iter()
            .map(|e| {
                let gold = scoring
                    .gold
                    .and_then(|g| g.get(&e.source))
                    .is_some_and(|ids| ids.contains(&e.id));
                if gold {
                    (1.0, RelevanceScore::ONE)
                } else {
                    (0.0, RelevanceScore::ZERO)
                }
            })
            .collect()),
    }
}

/// Scores and sorts the whole pool (descending, ties by ascending id).
pub fn rank_pool(
    query: &str,
    pool: &[Evidence],
    config: &RetrievalConfig,
    scoring: &Scoring<'_>,
) -> Result<Vec<ScoredEvidence>, RetrievalError> {
    if pool.is_empty() {
        return Err(RetrievalError::EmptyPool);
    }
    let scores = score_pool(query, pool, config, scoring)?;
    let mut ranked: Vec<(f64, &Evidence, RelevanceScore)> =
        pool.iter().zip(scores).map(|(e, (raw, s))| (raw, e, s)).collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.id.cmp(&b.1.id)));
    let scorer = match config.scorer {
        ScorerKind::Hard => ScorerKind::Oracle,
        k => k,
    };
    Ok(ranked
        .into_iter()
        .map(|(_, e, score)| ScoredEvidence { evidence: e.clone(), score, scorer })
        .collect())
}

/// The `top_n` best evidence of `pool` for `query`.
pub fn retrieve_topk(
    query: &str,
    pool: &[Evidence],
    config: &RetrievalConfig,
    scoring: &Scoring<'_>,
) -> Result<Vec<ScoredEvidence>, RetrievalError> {
    let mut ranked = rank_pool(query, pool, config, scoring)?;
    ranked.truncate(config.top_n.max(1));
    Ok(ranked)
}

/// Retrieval results of one plan, in plan order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainRetrieval {
    pub per_source: Vec<SourceResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceResult {
    pub source: SourceId,
    pub query: String,
    pub evidence: Vec<ScoredEvidence>,
}

impl ChainRetrieval {
    pub fn get(&self, source: &SourceId) -> Option<&[ScoredEvidence]> {
        self.per_source.iter().find(|r| &r.source == source).map(|r| r.evidence.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.per_source.is_empty()
    }

    /// All evidence in plan order, then rank order.
    pub fn flatten(&self) -> Vec<ScoredEvidence> {
        self.per_source.iter().flat_map(|r| r.evidence.iter().cloned()).collect()
    }
}

/// Retrieves source by source in plan order. A source's query is the
/// context, followed (newline-joined) by the top evidence of each planned
/// prerequisite already retrieved.
pub fn retrieve_chain(
    context: &DialogueContext,
    plan: &Plan,
    registry: &SourceRegistry,
    config: &RetrievalConfig,
    scoring: &Scoring<'_>,
) -> Result<ChainRetrieval, RetrievalError> {
    let base = context.query_text();
    let mut out = ChainRetrieval::default();
    for source in plan.sources() {
        let mut query = base.clone();
        let mut prerequisite_tops: Vec<&Evidence> = Vec::new();
        for dep in registry.depends_on(source) {
            let Some(prev) = out.get(dep) else { continue };
            let top = prev.first().ok_or_else(|| RetrievalError::Chain {
                source_name: source.to_string(),
                dependency: dep.to_string(),
            })?;
            prerequisite_tops.push(&top.evidence);
        }
        // plan order, not dependency-set order
        prerequisite_tops.sort_by_key(|e| plan.position(&e.source));
        for top in &prerequisite_tops {
            query.push('\n');
            query.push_str(&top.text);
        }

        let docs = registry.docs(source);
        let filtered: Vec<Evidence>;
        let pool: &[Evidence] = if config.hard_filter && !prerequisite_tops.is_empty() {
            filtered = docs
                .iter()
                .filter(|d| prerequisite_tops.iter().all(|p| d.links.contains(&p.id)))
                .cloned()
                .collect();
            if filtered.is_empty() {
                docs
            } else {
                &filtered
            }
        } else {
            docs
        };

        let evidence = if pool.is_empty() { Vec::new() } else { retrieve_topk(&query, pool, config, scoring)? };
        out.per_source.push(SourceResult { source: source.clone(), query, evidence });
    }
    Ok(out)
}
