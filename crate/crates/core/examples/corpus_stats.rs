//! Load a JSONL corpus, validate it and summarize its plan distribution.
//!
//! `cargo run --example corpus_stats [path/to/corpus.jsonl]`

use msrag::corpus::{corpus_stats, load_corpus};
use msrag::plan::ClassScheme;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/toy_corpus.jsonl").to_owned());
    let samples = load_corpus(&path)?;
    let stats = corpus_stats(&samples, &ClassScheme::kbp())?;
    println!("{}", serde_json::to_string_pretty(&stats)?);

    let s = &samples[0];
    println!("\nfirst sample {}:", s.id);
    for turn in s.context.turns() {
        println!("  {:?}: {}", turn.role, turn.text);
    }
    for (source, entry) in s.registry.entries() {
        let deps: Vec<String> = s.registry.depends_on(source).map(ToString::to_string).collect();
        println!("  source {source}: {} docs, depends on {deps:?}", entry.docs.len());
    }
    println!("  gold plan {}, gold evidence {:?}", s.label_plan, s.label_evidence);
    Ok(())
}
