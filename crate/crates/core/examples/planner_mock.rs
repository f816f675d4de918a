//! Source planning with a scripted chat model, in-context demonstrations and
//! the NULL fallback for unusable output.

use msrag::plan::Plan;
use msrag::planner::{build_planning_prompt, plan, Demonstration, PlannerBackend, PlannerConfig, PlanningInput};
use msrag::providers::{Providers, ScriptedChat};
use msrag::registry::{DialogueContext, SourceId, SourceRegistry, Turn};
use msrag::templates::PromptTemplates;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let registry = SourceRegistry::builder()
        .source("PERSONA", &[], &[("p1", "I play the violin.")])
        .describe("PERSONA", "facts the user shared")
        .source("DOCUMENTS", &["PERSONA"], &[("d1", "Violin strings wear out in months.")])
        .build()?;
    let templates = PromptTemplates::default();
    let ctx = DialogueContext::new(vec![Turn::user("My violin sounds dull, why?")])?;
    let chitchat = DialogueContext::new(vec![Turn::user("Good morning!")])?;

    let mut config = PlannerConfig::new(PlannerBackend::LlmIcl);
    config.demonstrations = vec![Demonstration {
        context: DialogueContext::new(vec![Turn::user("Any book for tonight?")])?,
        plan: Plan::new(vec![SourceId::new("PERSONA")?])?,
    }];

    let request = build_planning_prompt(&ctx, &registry, &config, &templates)?;
    println!("--- planning prompt ---\n{}\n", request.rendered_prompt());

    let garbled = build_planning_prompt(&chitchat, &registry, &config, &templates)?;
    let chat = ScriptedChat::new()
        .with_request(&request, "[SOURCE] PERSONA DOCUMENTS [EOS]")
        .with_request(&garbled, "I am not sure what you mean.");
    let providers = Providers::default().with_chat(chat);

    for c in [&ctx, &chitchat] {
        let outcome = plan(PlanningInput { context: c, registry: &registry, gold: None }, &config, &providers, &templates)?;
        println!("{:?} -> {} {:?}", c.query_text(), outcome.plan, outcome.warning);
    }

    let always = PlannerConfig::new(PlannerBackend::AlwaysAll);
    let outcome = plan(PlanningInput { context: &ctx, registry: &registry, gold: None }, &always, &providers, &templates)?;
    println!("always-all -> {}", outcome.plan);
    Ok(())
}
