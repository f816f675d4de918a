//! Planning F1, BLEU-1, Rouge-L, NLI consistency and a Recall@k table.

use std::collections::BTreeMap;

use msrag::evalkit::report::{RecallRow, RecallTable};
use msrag::evalkit::{bleu1, consistency_rate, f1_from_labels, rouge_l, TokenizerMode};
use msrag::providers::OverlapNli;
use msrag::retrieval::{recall_at_k, RankedQuery};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gold: Vec<String> = ["NULL", "NULL", "PERSONA", "BOTH", "BOTH", "NULL"].map(String::from).to_vec();
    let pred: Vec<String> = ["NULL", "BOTH", "PERSONA", "BOTH", "PERSONA", "NULL"].map(String::from).to_vec();
    for (class, s) in f1_from_labels(&pred, &gold)? {
        println!("{class:<8} P {:.3} R {:.3} F1 {:.3} (tp {} fp {} fn {})", s.precision, s.recall, s.f1, s.tp, s.fp, s.fn_);
    }

    let (cand, reference) = ("you could try a mountain trail", "try a mountain trail with warm layers");
    println!("\nBLEU-1  {:.4}", bleu1(cand, reference, TokenizerMode::Whitespace));
    println!("Rouge-L {:.4}", rouge_l(cand, reference, TokenizerMode::Whitespace));
    println!("CJK BLEU-1 {:.4}", bleu1("我喜欢爬山", "我也喜欢爬山", TokenizerMode::CharCjk));

    let pairs = vec![
        ("I love hiking in the mountains".to_string(), "you love hiking in the mountains".to_string()),
        ("I have a golden retriever.".to_string(), "Tea is nice.".to_string()),
    ];
    let rep = consistency_rate(&pairs, &OverlapNli { mode: TokenizerMode::Whitespace }, 0.5)?;
    println!("\nconsistency {:.1}% ({} of {})", rep.rate.unwrap_or(0.0), rep.entailed, rep.n);

    let q = |ranked: &[&str], gold: &str| RankedQuery {
        ranked: ranked.iter().map(|s| s.to_string()).collect(),
        gold: vec![gold.to_string()],
    };
    let mut recall = BTreeMap::new();
    recall.insert("PERSONA".to_string(), recall_at_k(&[q(&["p1", "p2"], "p1"), q(&["p3", "p1"], "p1")], 1)?);
    recall.insert("BOTH-DOCUMENTS".to_string(), recall_at_k(&[q(&["d2", "d1"], "d2")], 1)?);
    let table = RecallTable {
        k: 1,
        columns: vec!["PERSONA".into(), "BOTH-DOCUMENTS".into()],
        rows: vec![RecallRow { method: "bm25".into(), recall }],
    };
    print!("\n{}", table.to_csv());
    Ok(())
}
