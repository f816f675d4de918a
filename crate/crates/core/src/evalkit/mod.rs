//! Metrics: per-class planning F1, BLEU-1, Rouge-L and NLI-based
//! consistency rates, plus report aggregation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::{ClassScheme, Plan};
use crate::providers::{NliScorer, ProviderError};
use crate::registry::SourceId;
pub use crate::text::{tokenize, TokenizerMode};

pub mod report;

pub use report::{EvalReport, CSV_HEADER};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{pred} predictions for {gold} gold labels")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("threshold must lie in (0, 1), got {0}")]
    Threshold(f64),
    #[error("consistency of pair {index}: {source}")]
    Provider { index: usize, source: ProviderError },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Gold count of the class.
    pub support: usize,
    /// No true positive, so F1 was set to 0.
    pub zero_tp: bool,
}

impl ClassScore {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if tp == 0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        ClassScore { precision, recall, f1, tp, fp, fn_, support: tp + fn_, zero_tp: tp == 0 }
    }
}

/// One-vs-rest scores for every class that occurs among gold or predicted
/// plans.
pub fn f1_per_class(
    pred: &[Plan],
    gold: &[Plan],
    scheme: &ClassScheme,
) -> Result<BTreeMap<String, ClassScore>, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::LengthMismatch { pred: pred.len(), gold: gold.len() });
    }
    let p: Vec<String> = pred.iter().map(|x| scheme.classify(x)).collect();
    let g: Vec<String> = gold.iter().map(|x| scheme.classify(x)).collect();
    f1_from_labels(&p, &g)
}

/// Same as [`f1_per_class`] over already-classified labels.
pub fn f1_from_labels(pred: &[String], gold: &[String]) -> Result<BTreeMap<String, ClassScore>, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::LengthMismatch { pred: pred.len(), gold: gold.len() });
    }
    let classes: BTreeSet<&String> = pred.iter().chain(gold).collect();
    Ok(classes
        .into_iter()
        .map(|c| {
            let tp = pred.iter().zip(gold).filter(|(p, g)| *p == c && *g == c).count();
            let fp = pred.iter().zip(gold).filter(|(p, g)| *p == c && *g != c).count();
            let fn_ = pred.iter().zip(gold).filter(|(p, g)| *p != c && *g == c).count();
            (c.clone(), ClassScore::from_counts(tp, fp, fn_))
        })
        .collect())
}

fn counts(tokens: &[String]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

/// Sentence-level BLEU-1 over token lists.
pub fn bleu1_tokens(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let ref_counts = counts(reference);
    let clipped: usize = counts(cand)
        .into_iter()
        .map(|(t, n)| n.min(ref_counts.get(t).copied().unwrap_or(0)))
        .sum();
    let precision = clipped as f64 / cand.len() as f64;
    let bp = (1.0 - reference.len() as f64 / cand.len() as f64).min(0.0).exp();
    precision * bp
}

pub fn bleu1(candidate: &str, reference: &str, mode: TokenizerMode) -> f64 {
    bleu1_tokens(&tokenize(candidate, mode), &tokenize(reference, mode))
}

/// Longest common subsequence length, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_tokens(cand: &[String], reference: &[String]) -> f64 {
    let lcs = lcs_len(cand, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / cand.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

pub fn rouge_l(candidate: &str, reference: &str, mode: TokenizerMode) -> f64 {
    rouge_l_tokens(&tokenize(candidate, mode), &tokenize(reference, mode))
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Percentage of entailed pairs; `None` without pairs.
    pub rate: Option<f64>,
    pub entailed: usize,
    pub n: usize,
}

/// Share (in percent) of `(grounding, response)` pairs whose entailment
/// probability reaches `threshold`.
pub fn consistency_rate(
    pairs: &[(String, String)],
    nli: &dyn NliScorer,
    threshold: f64,
) -> Result<ConsistencyReport, EvalError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(EvalError::Threshold(threshold));
    }
    let mut entailed = 0;
    for (index, (grounding, response)) in pairs.iter().enumerate() {
        let s = nli.score(grounding, response).map_err(|source| EvalError::Provider { index, source })?;
        if s >= threshold {
            entailed += 1;
        }
    }
    let rate = (!pairs.is_empty()).then(|| 100.0 * entailed as f64 / pairs.len() as f64);
    Ok(ConsistencyReport { rate, entailed, n: pairs.len() })
}

/// Which consistency pool a source's evidence grounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundingRole {
    Persona,
    Knowledge,
}

/// Assigns sources to the persona or knowledge pool. Listed names win;
/// otherwise a name containing `PER` (PERSONA, USER-PER, BOT-PER) is persona.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleMap {
    pub persona: BTreeSet<String>,
    pub knowledge: BTreeSet<String>,
}

impl RoleMap {
    pub fn role(&self, source: &SourceId) -> GroundingRole {
        let name = source.as_str();
        if self.persona.contains(name) {
            GroundingRole::Persona
        } else if self.knowledge.contains(name) || !name.contains("PER") {
            GroundingRole::Knowledge
        } else {
            GroundingRole::Persona
        }
    }
}

/// Recall column of one (sample, planned source) pair. Single-source plans
/// use the source name; with `by_class`, sources planned together are
/// named `CLASS-SOURCE`. Ordering puts single-source columns first, then
/// groups by class and plan position.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RetrievalRole {
    combined: bool,
    class: String,
    position: usize,
    pub name: String,
}

pub fn retrieval_role(gold: &Plan, source: &SourceId, scheme: &ClassScheme, by_class: bool) -> RetrievalRole {
    let position = gold.position(source).unwrap_or(0);
    if gold.len() <= 1 || !by_class {
        RetrievalRole { combined: false, class: String::new(), position: 0, name: source.to_string() }
    } else {
        let class = scheme.classify(gold);
        RetrievalRole { combined: true, name: format!("{class}-{source}"), class, position }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{ConstantNli, ScriptedNli};

    fn toks(s: &str) -> Vec<String> {
        tokenize(s, TokenizerMode::Whitespace)
    }

    fn plan(names: &[&str]) -> Plan {
        Plan::new(names.iter().map(|n| SourceId::new(*n).unwrap()).collect()).unwrap()
    }

    #[test]
    fn tokenizer_cases() {
        assert_eq!(toks("a b"), vec!["a", "b"]);
        assert_eq!(tokenize("你好 world", TokenizerMode::CharCjk), vec!["你", "好", "world"]);
        assert!(toks("").is_empty());
    }

    #[test]
    fn f1_cases() {
        let scheme = ClassScheme::kbp();
        let gold = vec![Plan::null(), plan(&["PERSONA"]), plan(&["PERSONA", "DOCUMENTS"])];
        let same = f1_per_class(&gold, &gold, &scheme).unwrap();
        assert!(same.values().all(|c| c.f1 == 1.0));
        assert_eq!(same.values().map(|c| c.support).sum::<usize>(), 3);

        let wrong = vec![plan(&["PERSONA"]), Plan::null(), Plan::null()];
        let w = f1_per_class(&wrong, &gold, &scheme).unwrap();
        assert!(w.values().all(|c| c.f1 == 0.0 && c.zero_tp));

        let l = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let r = f1_from_labels(&l(&["A", "A", "B"]), &l(&["A", "B", "A"])).unwrap();
        assert_eq!((r["A"].tp, r["A"].fp, r["A"].fn_), (1, 1, 1));
        assert!((r["A"].f1 - 0.5).abs() < 1e-12);
        assert!(f1_per_class(&gold[..1], &gold, &scheme).is_err());
    }

    #[test]
    fn bleu_cases() {
        let m = TokenizerMode::Whitespace;
        assert_eq!(bleu1("a b c", "a b c", m), 1.0);
        assert!((bleu1("a b", "a c", m) - 0.5).abs() < 1e-12);
        assert_eq!(bleu1("", "a", m), 0.0);
        let short = bleu1("a", "a b", m);
        assert!((short - (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(bleu1("a a a", "a", m), 1.0 / 3.0);
    }

    #[test]
    fn rouge_cases() {
        let m = TokenizerMode::Whitespace;
        assert_eq!(rouge_l("a b c", "a b c", m), 1.0);
        assert!((rouge_l("a b c", "a c", m) - 0.8).abs() < 1e-12);
        assert_eq!(rouge_l("a b", "c d", m), 0.0);
        assert_eq!(rouge_l("", "c d", m), 0.0);
        assert_eq!(lcs_len(&[1, 2, 3, 2, 1], &[2, 1, 2, 3]), 3);
    }

    #[test]
    fn consistency_cases() {
        let pairs = vec![("g1".to_string(), "r1".to_string()), ("g2".to_string(), "r2".to_string())];
        assert_eq!(consistency_rate(&pairs, &ConstantNli(1.0), 0.5).unwrap().rate, Some(100.0));
        assert_eq!(consistency_rate(&pairs, &ConstantNli(0.0), 0.5).unwrap().rate, Some(0.0));
        let nli = ScriptedNli::new().with("g1", "r1", 0.9).with("g2", "r2", 0.1);
        assert_eq!(consistency_rate(&pairs, &nli, 0.5).unwrap().rate, Some(50.0));
        assert_eq!(consistency_rate(&[], &nli, 0.5).unwrap().rate, None);
        assert!(consistency_rate(&pairs, &nli, 1.0).is_err());
    }

    #[test]
    fn roles() {
        let id = |s: &str| SourceId::new(s).unwrap();
        let roles = RoleMap::default();
        assert_eq!(roles.role(&id("PERSONA")), GroundingRole::Persona);
        assert_eq!(roles.role(&id("BOT-PER")), GroundingRole::Persona);
        assert_eq!(roles.role(&id("DOCUMENTS")), GroundingRole::Knowledge);
        let scheme = ClassScheme::kbp();
        let both = plan(&["PERSONA", "DOCUMENTS"]);
        let docs = retrieval_role(&both, &id("DOCUMENTS"), &scheme, true);
        let pers = retrieval_role(&both, &id("PERSONA"), &scheme, true);
        let single = retrieval_role(&plan(&["PERSONA"]), &id("PERSONA"), &scheme, true);
        assert_eq!((docs.name.as_str(), pers.name.as_str(), single.name.as_str()), ("BOTH-DOCUMENTS", "BOTH-PERSONA", "PERSONA"));
        assert!(single < pers && pers < docs);
        assert_eq!(retrieval_role(&both, &id("DOCUMENTS"), &scheme, false).name, "DOCUMENTS");
    }
}
