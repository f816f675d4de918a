//! Relevance tokens, plan serialization and dependency validation.

use msrag::plan::{parse_plan, serialize_plan, validate_plan, ClassScheme, Plan};
use msrag::registry::{SourceId, SourceRegistry};
use msrag::tokens::quantize_score;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for x in [0.0, 0.04, 0.05, 0.349, 0.35, 0.91, 1.0] {
        println!("{x:>6} -> {}", quantize_score(x)?.token());
    }

    let registry = SourceRegistry::builder()
        .source("PERSONA", &[], &[("p1", "I love hiking.")])
        .source("DOCUMENTS", &["PERSONA"], &[("d1", "Trails above 2000 m are cold.")])
        .build()?;

    let id = |s: &str| SourceId::new(s).unwrap();
    let both = Plan::new(vec![id("PERSONA"), id("DOCUMENTS")])?;
    let text = serialize_plan(&both);
    println!("\n{text}");
    println!("parsed back: {:?}", parse_plan(&text, &registry)?.plan.sources());

    let noisy = parse_plan("Sure! [SOURCE] persona, WEATHER DOCUMENTS [EOS] hope that helps", &registry)?;
    println!("noisy output -> {} (dropped {:?})", noisy.plan, noisy.dropped);
    println!("NULL -> {:?}", parse_plan("[SOURCE] NULL [EOS]", &registry)?.plan);

    let reversed = Plan::new(vec![id("DOCUMENTS"), id("PERSONA")])?;
    match validate_plan(&reversed, &registry) {
        Ok(()) => println!("{reversed} is valid"),
        Err(v) => println!("{reversed} violates: {v:?}"),
    }

    let scheme = ClassScheme::kbp();
    for p in [Plan::null(), Plan::new(vec![id("PERSONA")])?, both] {
        println!("{:<40} class {}", p.to_string(), scheme.classify(&p));
    }
    Ok(())
}
