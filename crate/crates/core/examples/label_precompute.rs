//! Teacher label precomputation with a resumable cache, training records,
//! and the in-batch contrastive loss.

use msrag::corpus::load_corpus;
use msrag::labels::{mean_nll, precompute_labels, ContrastiveBatch, LabelCache, LabelConfig};
use msrag::providers::Providers;
use msrag::reader::emit_training_record;
use msrag::retrieval::ScorerKind;
use msrag::templates::PromptTemplates;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let samples = load_corpus(concat!(env!("CARGO_MANIFEST_DIR"), "/data/toy_corpus.jsonl"))?;
    let templates = PromptTemplates::default();
    let dir = std::env::temp_dir().join(format!("msrag-labels-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let cache_path = dir.join("labels.jsonl");

    let config = LabelConfig { scorer: ScorerKind::Hard, ..LabelConfig::default() };
    let first = precompute_labels(&samples, &config, &Providers::default(), &templates, &cache_path)?;
    let again = precompute_labels(&samples, &config, &Providers::default(), &templates, &cache_path)?;
    println!("first run wrote {} of {} labels; second run skipped {}", first.written, first.candidates, again.skipped_existing);

    let cache = LabelCache::load(&cache_path)?;
    let sample = samples.iter().find(|s| s.label_plan.len() == 2).unwrap();
    let record = emit_training_record(sample, &cache, ScorerKind::Hard, 7, &templates)?;
    println!("\ninput:  {:?}\ntarget: {:?}", record.input, record.target);
    println!("blocked mask runs: {:?}", record.mask.blocked);

    let sims = vec![vec![0.9, 0.1, 0.2], vec![0.3, 0.8, 0.1], vec![0.2, 0.4, 0.7]];
    let batches = ContrastiveBatch::in_batch(&sims);
    println!("\nin-batch loss over 3 queries: {:.4}", mean_nll(&batches)?);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
