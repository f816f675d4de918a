//! Okapi BM25 over an in-memory inverted index.
//!
//! `idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))` and each query term `t`
//! present in document `d` contributes
//! `idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(d) / avglen))`.
//! Repeated query terms count once.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::registry::Evidence;
use crate::text::{tokenize, TokenizerMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    postings: HashMap<String, Vec<(usize, u32)>>,
    doc_ids: Vec<String>,
    doc_lengths: Vec<usize>,
    avg_doc_length: f64,
    params: Bm25Params,
    mode: TokenizerMode,
}

pub fn bm25_build(docs: &[Evidence], mode: TokenizerMode, params: Bm25Params) -> Result<Bm25Index, RetrievalError> {
    if docs.is_empty() {
        return Err(RetrievalError::EmptyPool);
    }
    let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
    let mut doc_lengths = Vec::with_capacity(docs.len());
    for (pos, doc) in docs.iter().enumerate() {
        let tokens = tokenize(&doc.text, mode);
        doc_lengths.push(tokens.len());
        let mut tf: HashMap<String, u32> = HashMap::new();
        for t in tokens {
            *tf.entry(t).or_insert(0) += 1;
        }
        for (term, count) in tf {
            postings.entry(term).or_default().push((pos, count));
        }
    }
    let avg_doc_length = doc_lengths.iter().sum::<usize>() as f64 / docs.len() as f64;
    Ok(Bm25Index {
        postings,
        doc_ids: docs.iter().map(|d| d.id.clone()).collect(),
        doc_lengths,
        avg_doc_length,
        params,
        mode,
    })
}

impl Bm25Index {
    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_lengths(&self) -> &[usize] {
        &self.doc_lengths
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Score of every indexed document, in indexing order.
    pub fn score(&self, query: &str) -> Vec<(String, f64)> {
        let mut scores = vec![0.0; self.n_docs()];
        let terms: BTreeSet<String> = tokenize(query, self.mode).into_iter().collect();
        let Bm25Params { k1, b } = self.params;
        for term in &terms {
            let Some(list) = self.postings.get(term) else { continue };
            let idf = self.idf(term);
            for &(doc, tf) in list {
                let tf = f64::from(tf);
                let rel_len = if self.avg_doc_length > 0.0 {
                    self.doc_lengths[doc] as f64 / self.avg_doc_length
                } else {
                    1.0
                };
                scores[doc] += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * rel_len));
            }
        }
        self.doc_ids.iter().cloned().zip(scores).collect()
    }

    /// The `k` best documents, score descending, ties by ascending id.
    pub fn top_k(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        let mut scored = self.score(query);
        super::sort_ranked(&mut scored);
        scored.truncate(k);
        scored
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::SourceId;

    fn docs(texts: &[(&str, &str)]) -> Vec<Evidence> {
        let s = SourceId::new("DOCS").unwrap();
        texts.iter().map(|(id, t)| Evidence::new(*id, s.clone(), *t)).collect()
    }

    #[test]
    fn idf_for_one_of_two_docs_is_ln2() {
        let idx = bm25_build(&docs(&[("d1", "x y"), ("d2", "z")]), TokenizerMode::Whitespace, Bm25Params::default())
            .unwrap();
        assert!((idx.idf("x") - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_okapi_score() {
        let idx = bm25_build(&docs(&[("d1", "a a b"), ("d2", "b c")]), TokenizerMode::Whitespace, Bm25Params::default())
            .unwrap();
        let scores = idx.score("a");
        assert_eq!(scores[1], ("d2".to_string(), 0.0));
        // N=2, df=1 -> idf = ln 2; tf=2, len=3, avglen=2.5
        let idf = 2f64.ln();
        let expected = idf * 2.0 * 2.2 / (2.0 + 1.2 * (1.0 - 0.75 + 0.75 * 3.0 / 2.5));
        assert!((scores[0].1 - expected).abs() < 1e-12);
        assert!((expected - 0.9023).abs() < 1e-4);
    }

    #[test]
    fn empty_sum_and_symmetry() {
        let idx = bm25_build(&docs(&[("d1", "same text"), ("d2", "same text")]), TokenizerMode::Whitespace, Bm25Params::default())
            .unwrap();
        assert_eq!(idx.doc_lengths(), [2, 2]);
        assert_eq!(idx.avg_doc_length(), 2.0);
        let scores = idx.score("text");
        assert_eq!(scores[0].1, scores[1].1);
        assert!(idx.score("nothing").iter().all(|(_, s)| *s == 0.0));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(bm25_build(&[], TokenizerMode::Whitespace, Bm25Params::default()), Err(RetrievalError::EmptyPool)));
    }
}
