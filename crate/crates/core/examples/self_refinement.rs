//! Self-refinement: swap out evidence the response disagrees with, then
//! regenerate.

use msrag::corpus::load_corpus;
use msrag::providers::{ChatRequest, FnChat, OverlapNli, Providers};
use msrag::reader::{assemble_input, generate_response};
use msrag::refine::{PoolRetriever, RefinementConfig, Refiner};
use msrag::retrieval::{retrieve_chain, RetrievalConfig, Scoring};
use msrag::templates::PromptTemplates;
use msrag::text::TokenizerMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let samples = load_corpus(concat!(env!("CARGO_MANIFEST_DIR"), "/data/toy_corpus.jsonl"))?;
    let sample = samples.iter().find(|s| s.label_plan.len() == 2).unwrap();
    let templates = PromptTemplates::default();
    // echoes the first evidence block it was shown
    let chat = FnChat(|req: &ChatRequest| {
        let text = req.last_user();
        let block = text.split("[EVIDENCE]").nth(1).and_then(|b| b.split("[EOE]").next()).unwrap_or("no idea");
        Ok(format!("Well, {}", block.trim()))
    });
    let providers = Providers::default().with_chat(chat).with_nli(OverlapNli { mode: TokenizerMode::Whitespace });
    let scoring = Scoring { providers: &providers, templates: &templates, gold: None };
    let config = RetrievalConfig { top_n: 2, ..RetrievalConfig::default() };

    let chain = retrieve_chain(&sample.context, &sample.label_plan, &sample.registry, &config, &scoring)?;
    let evidence = chain.flatten();
    let prompt = assemble_input(&sample.context, &sample.label_plan, &evidence, &templates)?;
    let response = generate_response(&prompt, providers.chat()?, &templates, Default::default())?;
    println!("context: {}\ninitial: {response}", sample.context.query_text());

    let retriever = PoolRetriever { registry: &sample.registry, config: &config, scoring };
    let refiner = Refiner {
        providers: &providers,
        retriever: &retriever,
        templates: &templates,
        params: Default::default(),
        config: RefinementConfig { alpha: 1, steps: 3, skip_on_null: true },
    };
    let refined = refiner.refine_multi(&sample.context, &sample.label_plan, &evidence, &response)?;
    for t in &refined.traces {
        println!("\npass {}: S = {:?}", t.pass, t.s);
        println!("  evicted {:?} injected {:?} exhausted {:?}", t.evicted, t.injected, t.exhausted);
        println!("  -> {}", t.response);
    }
    println!("\nfinal evidence: {:?}", refined.evidences.iter().map(|e| &e.evidence.id).collect::<Vec<_>>());
    Ok(())
}
