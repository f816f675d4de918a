use serde::{Deserialize, Serialize};

use super::RetrievalError;

/// One query's ranking and its gold evidence ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedQuery {
    pub ranked: Vec<String>,
    pub gold: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub k: usize,
    /// Mean hit rate in `[0, 1]`; `None` when every query was skipped.
    pub recall: Option<f64>,
    pub hits: usize,
    pub evaluated: usize,
    /// Queries without gold evidence.
    pub skipped: usize,
}

pub fn hit_at_k(ranked: &[String], gold: &[String], k: usize) -> bool {
    ranked.iter().take(k).any(|id| gold.contains(id))
}

pub fn recall_at_k(queries: &[RankedQuery], k: usize) -> Result<RecallReport, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    let mut hits = 0;
    let mut evaluated = 0;
    let mut skipped = 0;
    for q in queries {
        if q.gold.is_empty() {
            skipped += 1;
            continue;
        }
        evaluated += 1;
        if hit_at_k(&q.ranked, &q.gold, k) {
            hits += 1;
        }
    }
    let recall = (evaluated > 0).then(|| hits as f64 / evaluated as f64);
    Ok(RecallReport { k, recall, hits, evaluated, skipped })
}
