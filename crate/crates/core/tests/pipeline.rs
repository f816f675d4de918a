mod common;

use std::fs;
use std::path::Path;

use msrag::cli::commands::{read_jsonl, ErrorRecord, PlanRecord, TraceRecord, REPORT};
use msrag::cli::config::{ChatSpec, NliSpec};
use msrag::cli::{execute, Command, CommandError, Run, RunConfig};
use msrag::planner::PlannerBackend;
use msrag::providers::{ChatRequest, ConstantNli, FnChat, ProviderError, Providers};
use msrag::retrieval::ScorerKind;
use msrag::templates::PromptTemplates;
use msrag::text::TokenizerMode;

fn base(out: &Path) -> RunConfig {
    let mut c = RunConfig { corpus: common::toy_corpus(), out_dir: out.to_path_buf(), ..RunConfig::default() };
    c.chat = Some(ChatSpec::References { fallback: None });
    c.nli = Some(NliSpec::Overlap { tokenizer: TokenizerMode::Whitespace });
    c.planner.backend = PlannerBackend::Oracle;
    c.retrieval.scorer = ScorerKind::Bm25;
    c
}

#[test]
fn staged_commands_compose_into_eval() {
    let direct = tempfile::tempdir().unwrap();
    Run::prepare(base(direct.path())).unwrap().eval().unwrap();

    let staged = tempfile::tempdir().unwrap();
    let run = Run::prepare(base(staged.path())).unwrap();
    run.plan_eval().unwrap();
    run.retrieve_eval().unwrap();
    run.generate().unwrap();
    let mut reuse = base(staged.path());
    reuse.eval.reuse_artifacts = true;
    Run::prepare(reuse).unwrap().eval().unwrap();

    assert_eq!(
        fs::read_to_string(direct.path().join(REPORT)).unwrap(),
        fs::read_to_string(staged.path().join(REPORT)).unwrap()
    );
    for name in ["plans.jsonl", "retrieval.json", "responses.jsonl"] {
        assert_eq!(
            fs::read_to_string(direct.path().join(name)).unwrap(),
            fs::read_to_string(staged.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn parallelism_does_not_change_outputs() {
    let dirs: Vec<_> = [1, 4]
        .into_iter()
        .map(|p| {
            let d = tempfile::tempdir().unwrap();
            let mut c = base(d.path());
            c.parallelism = p;
            c.eval.refine = true;
            Run::prepare(c).unwrap().eval().unwrap();
            d
        })
        .collect();
    for name in [REPORT, "plans.jsonl", "responses.jsonl", "refined.jsonl", "traces.jsonl"] {
        assert_eq!(
            fs::read(dirs[0].path().join(name)).unwrap(),
            fs::read(dirs[1].path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn refinement_keeps_evidence_counts_and_skips_null() {
    let d = tempfile::tempdir().unwrap();
    let run = Run::prepare(base(d.path())).unwrap();
    let generated = run.generate().unwrap();
    let (refined, traces) = run.refine().unwrap();
    assert_eq!(refined.len(), 30);
    for (a, b) in generated.iter().zip(&refined) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.evidence.len(), b.evidence.len());
    }
    let written: Vec<TraceRecord> = read_jsonl(&d.path().join("traces.jsonl")).unwrap();
    assert_eq!(written, traces);
    let null_ids: Vec<&str> = refined.iter().filter(|r| r.plan.is_null()).map(|r| r.id.as_str()).collect();
    assert_eq!(null_ids.len(), 15);
    assert!(traces.iter().all(|t| !null_ids.contains(&t.id.as_str())));
    assert!(traces.iter().all(|t| t.trace.selected.len() == 1));
}

#[test]
fn degenerate_planners_report_zero_tp() {
    let d = tempfile::tempdir().unwrap();
    let mut c = base(d.path());
    c.planner.backend = PlannerBackend::AlwaysNull;
    let scores = Run::prepare(c).unwrap().plan_eval().unwrap();
    assert_eq!(scores["NULL"].f1, 2.0 * 0.5 / 1.5);
    assert!(scores["PERSONA"].zero_tp && scores["BOTH"].zero_tp);
    let plans: Vec<PlanRecord> = read_jsonl(&d.path().join("plans.jsonl")).unwrap();
    assert!(plans.iter().all(|p| p.plan.is_null()));
}

#[test]
fn llm_planner_output_is_parsed_and_validated() {
    let templates = PromptTemplates::default();
    let generation = templates.generation.trim_end().to_owned();
    let chat = FnChat(move |req: &ChatRequest| {
        if req.messages[0].content == generation {
            return Ok("a reply".into());
        }
        // the second-to-last mention wins: reverse order breaks the dependency
        Ok(if req.last_user().contains("hiking") {
            "[SOURCE] DOCUMENTS PERSONA [EOS]".into()
        } else {
            "Plan: [SOURCE] PERSONA POEMS [EOS]".into()
        })
    });
    let d = tempfile::tempdir().unwrap();
    let mut c = base(d.path());
    c.planner.backend = PlannerBackend::LlmZeroShot;
    let run = Run::with_providers(c, Providers::default().with_chat(chat)).unwrap();
    let out = run.plan_all();
    assert!(out.errors.is_empty());
    for p in &out.items {
        let sample = run.sample(&p.id).unwrap();
        if sample.context.query_text().contains("hiking") {
            assert!(p.plan.is_null(), "{}: invalid order falls back to NULL", p.id);
            assert!(p.warning.is_some());
        } else {
            assert_eq!(p.plan.signature(), "PERSONA");
            assert_eq!(p.dropped, ["POEMS"]);
        }
    }
}

#[test]
fn failing_samples_are_logged() {
    let chat = FnChat(|req: &ChatRequest| {
        if req.last_user().contains("violin") {
            Err(ProviderError::Timeout)
        } else {
            Ok("fine".into())
        }
    });
    let d = tempfile::tempdir().unwrap();
    let run = Run::with_providers(base(d.path()), Providers::default().with_chat(chat).with_nli(ConstantNli(1.0))).unwrap();
    match run.generate() {
        Err(CommandError::SampleFailures { count, .. }) => assert!(count >= 1),
        other => panic!("expected sample failures, got {other:?}"),
    }
    let errors: Vec<ErrorRecord> = read_jsonl(&d.path().join("errors.jsonl")).unwrap();
    assert!(!errors.is_empty() && errors.iter().all(|e| e.stage == "generate"));
    let responses: Vec<serde_json::Value> = read_jsonl(&d.path().join("responses.jsonl")).unwrap();
    assert_eq!(responses.len() + errors.len(), 30);
}

#[test]
fn labels_resume_from_cache() {
    let d = tempfile::tempdir().unwrap();
    let mut c = base(d.path());
    c.labels.emit_records = true;
    c.labels.timestamp = Some("2024-01-01T00:00:00Z".parse().unwrap());
    let run = Run::prepare(c).unwrap();
    let first = run.label().unwrap();
    assert_eq!(first.written, first.candidates);
    assert!(first.candidates > 0 && first.failures.is_empty());
    let second = run.label().unwrap();
    assert_eq!((second.written, second.skipped_existing), (0, first.candidates));
    let records: Vec<msrag::reader::TrainingRecord> = read_jsonl(&d.path().join("records.jsonl")).unwrap();
    assert_eq!(records.len(), 30);
    assert!(records.iter().all(|r| r.target.contains("[SOURCE]")));
}

#[test]
fn stats_of_toy_corpus() {
    let d = tempfile::tempdir().unwrap();
    let stats = Run::prepare(base(d.path())).unwrap().stats().unwrap();
    assert_eq!(stats.n_samples, 30);
    assert_eq!(stats.pct_with_source, 50.0);
    assert_eq!(stats.plan_histogram["BOTH"], 10);
}

#[test]
fn bad_inputs_exit_with_two() {
    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\": 1}\n").unwrap();
    let mut c = base(d.path());
    c.corpus = bad;
    assert_eq!(execute(Command::Stats, c), 2);
    let mut missing = base(d.path());
    missing.corpus = d.path().join("nope.jsonl");
    assert_eq!(execute(Command::Stats, missing), 2);
}

#[test]
fn repl_session() {
    let d = tempfile::tempdir().unwrap();
    let mut c = base(d.path());
    c.chat = Some(ChatSpec::Constant { reply: "Try the mountains.".into() });
    c.nli = Some(NliSpec::Constant { value: 0.5 });
    c.planner.backend = PlannerBackend::AlwaysAll;
    let run = Run::prepare(c).unwrap();
    let input = ":sources\nWhere should I go hiking?\nr\n:reset\n:sample nope\n:quit\nignored\n";
    let mut out = Vec::new();
    msrag::cli::repl::repl(&run, input.as_bytes(), &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.contains("PERSONA (5 docs)"), "{text}");
    assert!(text.contains("plan: [SOURCE] PERSONA DOCUMENTS [EOS]"), "{text}");
    assert!(text.contains("system: Try the mountains."), "{text}");
    assert!(text.contains("pass 1:"), "{text}");
    assert!(text.contains("no sample \"nope\""), "{text}");
    assert!(!text.contains("ignored"));
}
