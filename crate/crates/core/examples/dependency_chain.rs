//! Dependency-aware retrieval: the documents query carries the top persona
//! evidence, optionally restricted to documents linked to it.

use msrag::corpus::load_corpus;
use msrag::providers::Providers;
use msrag::retrieval::{retrieve_chain, RetrievalConfig, Scoring};
use msrag::templates::PromptTemplates;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let samples = load_corpus(concat!(env!("CARGO_MANIFEST_DIR"), "/data/toy_corpus.jsonl"))?;
    let sample = samples.iter().find(|s| s.label_plan.len() == 2).expect("toy corpus has two-source plans");
    let providers = Providers::default();
    let templates = PromptTemplates::default();
    let scoring = Scoring { providers: &providers, templates: &templates, gold: None };

    println!("sample {} with plan {}", sample.id, sample.label_plan);
    for hard_filter in [false, true] {
        let config = RetrievalConfig { top_n: 2, hard_filter, ..RetrievalConfig::default() };
        let chain = retrieve_chain(&sample.context, &sample.label_plan, &sample.registry, &config, &scoring)?;
        println!("\nhard_filter = {hard_filter}");
        for r in &chain.per_source {
            println!("  {} query: {:?}", r.source, r.query);
            for e in &r.evidence {
                println!("    {} [{}] {}", e.evidence.id, e.score, e.evidence.text);
            }
        }
    }
    println!("\ngold evidence: {:?}", sample.label_evidence);
    Ok(())
}
