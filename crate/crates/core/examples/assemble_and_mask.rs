//! Generation input layout and the evidence attention mask.

use msrag::plan::Plan;
use msrag::reader::{assemble_input, build_attention_mask, SegmentKind};
use msrag::registry::{DialogueContext, Evidence, SourceId, Turn};
use msrag::retrieval::{ScoredEvidence, ScorerKind};
use msrag::templates::PromptTemplates;
use msrag::tokens::RelevanceScore;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let persona = SourceId::new("PERSONA")?;
    let docs = SourceId::new("DOCUMENTS")?;
    let ev = |id: &str, s: &SourceId, text: &str, tenths: u8| ScoredEvidence {
        evidence: Evidence::new(id, s.clone(), text),
        score: RelevanceScore::from_tenths(tenths).unwrap(),
        scorer: ScorerKind::Bm25,
    };
    let evidence = vec![
        ev("p1", &persona, "I love hiking.", 9),
        ev("d1", &docs, "Trails above 2000 m are cold.", 7),
        ev("d2", &docs, "Tea has caffeine.", 1),
    ];
    let ctx = DialogueContext::new(vec![Turn::user("Where should I hike?")])?;
    let plan = Plan::new(vec![persona, docs])?;
    let prompt = assemble_input(&ctx, &plan, &evidence, &PromptTemplates::default())?.with_response("Try a high trail.");

    println!("{}\n", prompt.text);
    for s in &prompt.segments {
        println!("{:<14} {:>4}..{:<4} {:?}", s.label(), s.start, s.end, prompt.segment_text(s));
    }

    let mask = build_attention_mask(&prompt);
    let labels: Vec<String> = prompt.segments.iter().map(|s| s.label()).collect();
    println!("\n{:>14} {}", "", labels.iter().map(|l| format!("{:>3}", &l[..3.min(l.len())])).collect::<String>());
    for (a, row) in mask.rows().iter().enumerate() {
        let cells: String = row.iter().map(|&ok| if ok { "  x" } else { "  ." }).collect();
        println!("{:>14} {cells}", labels[a]);
    }
    let sims = prompt.segments.iter().filter(|s| s.kind == SegmentKind::Sim).count();
    println!("\n{sims} score slots; export: {}", serde_json::to_string(&mask.export(&prompt).blocked)?);
    Ok(())
}
