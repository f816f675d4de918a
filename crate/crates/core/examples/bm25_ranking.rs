//! Sparse ranking: raw Okapi scores, then grid scores for the same pool.

use msrag::providers::Providers;
use msrag::registry::{Evidence, SourceId};
use msrag::retrieval::{bm25_build, rank_pool, Bm25Params, RetrievalConfig, Scoring};
use msrag::templates::PromptTemplates;
use msrag::text::TokenizerMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let source = SourceId::new("DOCUMENTS")?;
    let docs: Vec<Evidence> = [
        ("d1", "Mountain trails above two thousand meters need warm layers."),
        ("d2", "Sichuan pepper gives dishes a numbing flavor."),
        ("d3", "Trail running shoes need more grip on wet mountain paths."),
        ("d4", "Green tea contains less caffeine than black tea."),
        ("d5", "我喜欢在山里徒步。"),
    ]
    .iter()
    .map(|(id, text)| Evidence::new(*id, source.clone(), *text))
    .collect();

    let index = bm25_build(&docs, TokenizerMode::CharCjk, Bm25Params::default())?;
    println!("{} docs, average length {:.2}", index.n_docs(), index.avg_doc_length());
    let query = "which mountain trails need warm layers";
    for (id, score) in index.top_k(query, 3) {
        println!("  {id}: {score:.4}");
    }
    println!("idf(mountain) = {:.4}, idf(tea) = {:.4}", index.idf("mountain"), index.idf("tea"));

    let providers = Providers::default();
    let templates = PromptTemplates::default();
    let scoring = Scoring { providers: &providers, templates: &templates, gold: None };
    println!("\nas grid scores:");
    for e in rank_pool(query, &docs, &RetrievalConfig::default(), &scoring)? {
        println!("  {} [{}] {}", e.evidence.id, e.score, e.evidence.text);
    }
    println!("\nCJK query:");
    for (id, score) in index.top_k("山里", 2) {
        println!("  {id}: {score:.4}");
    }
    Ok(())
}
