use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ClassScore;
use crate::retrieval::RecallReport;
use crate::text::TokenizerMode;

pub const BLEU_VARIANT: &str = "sentence-level BLEU-1, macro-averaged";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Free-form configuration label, e.g. `oracle/bm25/top1`.
    pub label: String,
    pub n_samples: usize,
    pub planning: BTreeMap<String, ClassScore>,
    pub recall_k: usize,
    /// Keyed by retrieval role (`PERSONA`, `BOTH-DOCUMENTS`, ...).
    pub recall: BTreeMap<String, RecallReport>,
    pub bleu1: Option<f64>,
    pub rouge_l: Option<f64>,
    pub bleu_variant: String,
    pub tokenizer: TokenizerMode,
    /// Percentages.
    pub persona_consistency: Option<f64>,
    pub knowledge_consistency: Option<f64>,
    pub consistency_threshold: f64,
    /// Reason to count of samples or items left out of some metric.
    pub skipped: BTreeMap<String, usize>,
}

pub const CSV_HEADER: &str = "label,n_samples,planning_f1,recall,bleu1,rouge_l,pc,kc";

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_json() + "\n")
    }

    /// One CSV row matching [`CSV_HEADER`]; per-class and per-role cells
    /// are `name=value` lists joined by `;`.
    pub fn csv_row(&self) -> String {
        let f1: Vec<String> = self.planning.iter().map(|(c, s)| format!("{c}={:.6}", s.f1)).collect();
        let recall: Vec<String> =
            self.recall.iter().map(|(r, rep)| format!("{r}={}", opt(rep.recall))).collect();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.label.replace(',', ";"),
            self.n_samples,
            f1.join(";"),
            recall.join(";"),
            opt(self.bleu1),
            opt(self.rouge_l),
            opt(self.persona_consistency),
            opt(self.knowledge_consistency),
        )
    }
}

/// Recall@k per role laid out as one row per method, roles as columns,
/// values in percent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecallTable {
    pub k: usize,
    pub columns: Vec<String>,
    pub rows: Vec<RecallRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub method: String,
    pub recall: BTreeMap<String, RecallReport>,
}

impl RecallTable {
    pub fn to_csv(&self) -> String {
        let roles = &self.columns;
        let mut out = format!("method,{}\n", roles.iter().map(|r| format!("{r} R@{}", self.k)).collect::<Vec<_>>().join(","));
        for row in &self.rows {
            let cells: Vec<String> = roles
                .iter()
                .map(|r| {
                    row.recall.get(r).and_then(|rep| rep.recall).map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_default()
                })
                .collect();
            out.push_str(&format!("{},{}\n", row.method, cells.join(",")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rep(recall: f64) -> RecallReport {
        RecallReport { k: 1, recall: Some(recall), hits: 0, evaluated: 0, skipped: 0 }
    }

    #[test]
    fn table_layout() {
        let mut recall = BTreeMap::new();
        recall.insert("BOTH-DOCUMENTS".to_string(), rep(0.5));
        recall.insert("PERSONA".to_string(), rep(0.368));
        recall.insert("BOTH-PERSONA".to_string(), rep(0.25));
        let columns = vec!["PERSONA".into(), "BOTH-PERSONA".into(), "BOTH-DOCUMENTS".into()];
        let t = RecallTable { k: 1, columns, rows: vec![RecallRow { method: "bm25".into(), recall }] };
        assert_eq!(t.to_csv(), "method,PERSONA R@1,BOTH-PERSONA R@1,BOTH-DOCUMENTS R@1\nbm25,36.80,25.00,50.00\n");
    }
}
