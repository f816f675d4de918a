use std::collections::BTreeSet;

use proptest::prelude::*;

use msrag::evalkit::{bleu1_tokens, f1_from_labels, lcs_len, rouge_l_tokens};
use msrag::labels::{nll_loss, ContrastiveBatch};
use msrag::plan::{parse_plan, serialize_plan, validate_plan, Plan};
use msrag::reader::{assemble_input, build_attention_mask, shuffle_evidence, MaskExport};
use msrag::refine::select_updates;
use msrag::registry::{DialogueContext, Evidence, SourceId, SourceRegistry, Turn};
use msrag::retrieval::{bm25_build, recall_at_k, Bm25Params, RankedQuery, ScoredEvidence, ScorerKind};
use msrag::templates::PromptTemplates;
use msrag::text::{tokenize, TokenizerMode};
use msrag::tokens::{quantize_score, RelevanceScore};

fn tokens(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]).prop_map(String::from), 0..=max)
}

fn chain_registry() -> SourceRegistry {
    SourceRegistry::builder()
        .source("PERSONA", &[], &[("p1", "x")])
        .source("DOCUMENTS", &["PERSONA"], &[("d1", "y")])
        .source("MEMORY", &[], &[("m1", "z")])
        .source("NEWS", &["MEMORY", "DOCUMENTS"], &[("n1", "w")])
        .build()
        .unwrap()
}

proptest! {
    #[test]
    fn quantize_is_nearest_and_monotone(x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
        let (qx, qy) = (quantize_score(x).unwrap(), quantize_score(y).unwrap());
        prop_assert!((qx.value() - x).abs() <= 0.05 + 1e-12);
        if x <= y {
            prop_assert!(qx <= qy);
        }
        prop_assert_eq!(RelevanceScore::parse_token(&qx.token()), Some(qx));
    }

    #[test]
    fn quantize_rejects_outside(x in prop_oneof![-10.0f64..-1e-9, 1.0 + 1e-9..10.0]) {
        prop_assert!(quantize_score(x).is_err());
    }

    #[test]
    fn plan_text_round_trips(order in Just(vec!["PERSONA", "DOCUMENTS", "MEMORY", "NEWS"]).prop_shuffle(), k in 0usize..=4) {
        let registry = chain_registry();
        let plan = Plan::new(order[..k].iter().map(|s| SourceId::new(*s).unwrap()).collect()).unwrap();
        let parsed = parse_plan(&serialize_plan(&plan), &registry).unwrap();
        prop_assert_eq!(&parsed.plan, &plan);
        // a valid plan stays valid after appending any missing source that has its prerequisites
        if validate_plan(&plan, &registry).is_ok() {
            for s in registry.source_ids().filter(|s| !plan.contains(s)) {
                let mut longer = plan.sources().to_vec();
                longer.push(s.clone());
                let ok = registry.depends_on(s).all(|d| plan.contains(d));
                prop_assert_eq!(validate_plan(&Plan::new(longer).unwrap(), &registry).is_ok(), ok);
            }
        }
    }

    #[test]
    fn overlap_metrics_are_bounded(c in tokens(12), r in tokens(12)) {
        let b = bleu1_tokens(&c, &r);
        let l = rouge_l_tokens(&c, &r);
        prop_assert!((0.0..=1.0).contains(&b));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&l));
        prop_assert!((l - rouge_l_tokens(&r, &c)).abs() < 1e-12);
        prop_assert!(lcs_len(&c, &r) <= c.len().min(r.len()));
        if !c.is_empty() {
            prop_assert_eq!(bleu1_tokens(&c, &c), 1.0);
            prop_assert!((rouge_l_tokens(&c, &c) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cjk_tokens_cover_the_text(s in "[a-z 你好世界]{0,20}") {
        let joined: String = tokenize(&s, TokenizerMode::CharCjk).concat();
        let stripped: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        prop_assert_eq!(joined, stripped);
    }

    #[test]
    fn loss_is_shift_invariant(p in -5.0f64..5.0, negs in prop::collection::vec(-5.0f64..5.0, 1..6), shift in -20.0f64..20.0) {
        let a = nll_loss(&ContrastiveBatch::new(p, negs.clone()).unwrap()).unwrap();
        let moved: Vec<f64> = negs.iter().map(|x| x + shift).collect();
        let b = nll_loss(&ContrastiveBatch::new(p + shift, moved).unwrap()).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn selection_takes_the_smallest(s in prop::collection::vec((0u8..=4).prop_map(|x| f64::from(x) / 4.0), 1..8), alpha in 1usize..10) {
        let picked = select_updates(&s, alpha).unwrap();
        prop_assert_eq!(picked.len(), alpha.min(s.len()));
        prop_assert!(picked.windows(2).all(|w| w[0] < w[1]));
        let rest: Vec<usize> = (0..s.len()).filter(|i| !picked.contains(i)).collect();
        for &i in &picked {
            for &j in &rest {
                prop_assert!(s[i] < s[j] || (s[i] == s[j] && i < j));
            }
        }
    }

    #[test]
    fn shuffle_is_a_seeded_permutation(items in prop::collection::vec(any::<u16>(), 0..20), seed in any::<u64>()) {
        let a = shuffle_evidence(&items, seed);
        prop_assert_eq!(&a, &shuffle_evidence(&items, seed));
        let (mut x, mut y) = (a.clone(), items.clone());
        x.sort_unstable();
        y.sort_unstable();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn mask_export_round_trips(n in 0usize..5, tenths in prop::collection::vec(0u8..=10, 5)) {
        let s = SourceId::new("PERSONA").unwrap();
        let evs: Vec<ScoredEvidence> = (0..n)
            .map(|i| ScoredEvidence {
                evidence: Evidence::new(format!("e{i}"), s.clone(), format!("fact {i}")),
                score: RelevanceScore::from_tenths(tenths[i]).unwrap(),
                scorer: ScorerKind::Bm25,
            })
            .collect();
        let ctx = DialogueContext::new(vec![Turn::user("hi")]).unwrap();
        let prompt = assemble_input(&ctx, &Plan::new(vec![s]).unwrap(), &evs, &PromptTemplates::default()).unwrap();
        let mask = build_attention_mask(&prompt);
        let export = mask.export(&prompt);
        let json = serde_json::to_string(&export).unwrap();
        let back: MaskExport = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back.to_mask(), mask.clone());
        prop_assert_eq!(export.blocked.is_empty(), n <= 1);
        prop_assert_eq!(prompt.n_evidence(), n);
    }

    #[test]
    fn bm25_ranking_is_sorted(docs in prop::collection::vec(tokens(8), 1..15), query in tokens(4)) {
        let s = SourceId::new("D").unwrap();
        let ev: Vec<Evidence> =
            docs.iter().enumerate().map(|(i, t)| Evidence::new(format!("{i:02}"), s.clone(), t.join(" "))).collect();
        let index = bm25_build(&ev, TokenizerMode::Whitespace, Bm25Params::default()).unwrap();
        let q: BTreeSet<&String> = query.iter().collect();
        let top = index.top_k(&query.join(" "), ev.len());
        prop_assert_eq!(top.len(), ev.len());
        for w in top.windows(2) {
            prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
        for (id, score) in &top {
            let i: usize = id.parse().unwrap();
            prop_assert!(*score >= 0.0);
            if !docs[i].iter().any(|t| q.contains(t)) {
                prop_assert_eq!(*score, 0.0);
            }
        }
    }

    #[test]
    fn recall_grows_with_k(ranks in prop::collection::vec((prop::collection::vec(0u8..6, 0..6), 0u8..6), 1..10)) {
        let qs: Vec<RankedQuery> = ranks
            .iter()
            .map(|(r, g)| RankedQuery { ranked: r.iter().map(|x| x.to_string()).collect(), gold: vec![g.to_string()] })
            .collect();
        let mut last = 0.0;
        for k in 1..=6 {
            let r = recall_at_k(&qs, k).unwrap().recall.unwrap();
            prop_assert!(r >= last);
            last = r;
        }
    }

    #[test]
    fn perfect_predictions_score_one(labels in prop::collection::vec(prop::sample::select(vec!["NULL", "PERSONA", "BOTH"]), 1..30)) {
        let l: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        for (class, s) in f1_from_labels(&l, &l).unwrap() {
            prop_assert_eq!(s.f1, 1.0, "class {}", class);
        }
        let flipped: Vec<String> = l.iter().map(|c| if c == "NULL" { "BOTH".into() } else { "NULL".into() }).collect();
        for s in f1_from_labels(&flipped, &l).unwrap().values() {
            prop_assert!((0.0..=1.0).contains(&s.f1));
            prop_assert_eq!(s.zero_tp, s.tp == 0);
        }
    }
}
