//! Self-refinement at inference: score each evidence by how well the
//! response agrees with it times its relevance, swap out the worst ones for
//! unseen evidence of the same source, and regenerate.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::Plan;
use crate::providers::{GenParams, NliScorer, ProviderError, Providers};
use crate::reader::{assemble_input, generate_response, ReaderError};
use crate::registry::{DialogueContext, SourceId, SourceRegistry};
use crate::retrieval::{rank_pool, RetrievalConfig, RetrievalError, ScoredEvidence, Scoring};
use crate::templates::PromptTemplates;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RefineError {
    #[error("no combined scores to select from")]
    Empty,
    #[error("alpha and steps must be at least 1")]
    InvalidConfig,
    #[error("consistency score of evidence {index}: {source}")]
    Nli { index: usize, source: ProviderError },
    #[error("consistency score of evidence {index} is {value}, outside [0, 1]")]
    NliRange { index: usize, value: f64 },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Reader(#[from] ReaderError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinementConfig {
    /// Evidence replaced per pass.
    pub alpha: usize,
    pub steps: usize,
    /// Leave turns planned as NULL untouched.
    pub skip_on_null: bool,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig { alpha: 1, steps: 1, skip_on_null: true }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        if self.alpha == 0 || self.steps == 0 {
            return Err(RefineError::InvalidConfig);
        }
        Ok(())
    }
}

/// Per-evidence factors of one pass, index-aligned with the evidence list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub s_nli: Vec<f64>,
    pub s_ce: Vec<f64>,
    pub s: Vec<f64>,
}

/// `S_i = nli(e_i.text, response) * e_i.score`.
pub fn score_breakdown(
    evidences: &[ScoredEvidence],
    response: &str,
    nli: &dyn NliScorer,
) -> Result<ScoreBreakdown, RefineError> {
    let mut out = ScoreBreakdown { s_nli: Vec::new(), s_ce: Vec::new(), s: Vec::new() };
    for (index, e) in evidences.iter().enumerate() {
        let n = nli.score(&e.evidence.text, response).map_err(|source| RefineError::Nli { index, source })?;
        if !(0.0..=1.0).contains(&n) {
            return Err(RefineError::NliRange { index, value: n });
        }
        let ce = e.score.value();
        out.s_nli.push(n);
        out.s_ce.push(ce);
        out.s.push(n * ce);
    }
    Ok(out)
}

pub fn combined_scores(
    evidences: &[ScoredEvidence],
    response: &str,
    nli: &dyn NliScorer,
) -> Result<Vec<f64>, RefineError> {
    Ok(score_breakdown(evidences, response, nli)?.s)
}

/// Indices of the `alpha` smallest scores (ties toward the smaller index),
/// returned in ascending index order. `alpha` is clamped to the list length.
pub fn select_updates(s: &[f64], alpha: usize) -> Result<Vec<usize>, RefineError> {
    if s.is_empty() {
        return Err(RefineError::Empty);
    }
    if alpha == 0 {
        return Err(RefineError::InvalidConfig);
    }
    if alpha > s.len() {
        log::warn!("update number {alpha} exceeds {} evidences, clamping", s.len());
    }
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b)));
    let mut picked: Vec<usize> = order.into_iter().take(alpha.min(s.len())).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Ranked candidates of one source for a context, best first.
pub trait Retriever: Sync {
    fn rank(&self, context: &DialogueContext, source: &SourceId) -> Result<Vec<ScoredEvidence>, RetrievalError>;
}

/// Ranks a registry's pool with the configured scorer, querying with the
/// context alone.
pub struct PoolRetriever<'a> {
    pub registry: &'a SourceRegistry,
    pub config: &'a RetrievalConfig,
    pub scoring: Scoring<'a>,
}

impl Retriever for PoolRetriever<'_> {
    fn rank(&self, context: &DialogueContext, source: &SourceId) -> Result<Vec<ScoredEvidence>, RetrievalError> {
        let pool = self.registry.docs(source);
        if pool.is_empty() {
            return Ok(Vec::new());
        }
        rank_pool(&context.query_text(), pool, self.config, &self.scoring)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub pass: usize,
    pub s_nli: Vec<f64>,
    pub s_ce: Vec<f64>,
    pub s: Vec<f64>,
    /// Slots chosen for update (effective alpha = its length).
    pub selected: Vec<usize>,
    pub evicted: Vec<String>,
    pub injected: Vec<String>,
    /// Selected evidence kept because its source had nothing unseen left.
    pub exhausted: Vec<String>,
    pub response: String,
}

impl RefinementTrace {
    pub fn pool_exhausted(&self) -> bool {
        !self.exhausted.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refined {
    pub evidences: Vec<ScoredEvidence>,
    pub response: String,
    pub traces: Vec<RefinementTrace>,
}

/// Everything refinement calls out to.
pub struct Refiner<'a> {
    pub providers: &'a Providers,
    pub retriever: &'a dyn Retriever,
    pub templates: &'a PromptTemplates,
    pub params: GenParams,
    pub config: RefinementConfig,
}

impl Refiner<'_> {
    fn unchanged(evidences: &[ScoredEvidence], response: &str) -> Refined {
        Refined { evidences: evidences.to_vec(), response: response.to_owned(), traces: Vec::new() }
    }

    fn pass(
        &self,
        number: usize,
        context: &DialogueContext,
        plan: &Plan,
        evidences: &[ScoredEvidence],
        response: &str,
        history: &mut BTreeSet<String>,
    ) -> Result<(Vec<ScoredEvidence>, RefinementTrace), RefineError> {
        let scores = score_breakdown(evidences, response, self.providers.nli()?)?;
        let selected = select_updates(&scores.s, self.config.alpha)?;
        let mut next = evidences.to_vec();
        let (mut evicted, mut injected, mut exhausted) = (Vec::new(), Vec::new(), Vec::new());
        for &slot in &selected {
            let old = &evidences[slot];
            let ranked = self.retriever.rank(context, &old.evidence.source)?;
            match ranked.into_iter().find(|c| !history.contains(&c.evidence.id)) {
                Some(fresh) => {
                    history.insert(fresh.evidence.id.clone());
                    evicted.push(old.evidence.id.clone());
                    injected.push(fresh.evidence.id.clone());
                    next[slot] = fresh;
                }
                None => exhausted.push(old.evidence.id.clone()),
            }
        }
        let response = if injected.is_empty() {
            response.to_owned()
        } else {
            let prompt = assemble_input(context, plan, &next, self.templates)?;
            generate_response(&prompt, self.providers.chat()?, self.templates, self.params)?
        };
        let trace = RefinementTrace {
            pass: number,
            s_nli: scores.s_nli,
            s_ce: scores.s_ce,
            s: scores.s,
            selected,
            evicted,
            injected,
            exhausted,
            response,
        };
        Ok((next, trace))
    }

    /// One pass. NULL plans (when skipping) and empty evidence lists come
    /// back unchanged with no trace.
    pub fn refine_once(
        &self,
        context: &DialogueContext,
        plan: &Plan,
        evidences: &[ScoredEvidence],
        response: &str,
    ) -> Result<Refined, RefineError> {
        self.run(context, plan, evidences, response, 1)
    }

    /// Up to `config.steps` passes sharing one evidence history. Stops
    /// before recording a later pass that replaces nothing.
    pub fn refine_multi(
        &self,
        context: &DialogueContext,
        plan: &Plan,
        evidences: &[ScoredEvidence],
        response: &str,
    ) -> Result<Refined, RefineError> {
        self.run(context, plan, evidences, response, self.config.steps)
    }

    fn run(
        &self,
        context: &DialogueContext,
        plan: &Plan,
        evidences: &[ScoredEvidence],
        response: &str,
        steps: usize,
    ) -> Result<Refined, RefineError> {
        self.config.validate()?;
        if (plan.is_null() && self.config.skip_on_null) || evidences.is_empty() {
            return Ok(Self::unchanged(evidences, response));
        }
        let mut history: BTreeSet<String> = evidences.iter().map(|e| e.evidence.id.clone()).collect();
        let mut current = Self::unchanged(evidences, response);
        for number in 1..=steps {
            let (next, trace) = self.pass(number, context, plan, &current.evidences, &current.response, &mut history)?;
            if number > 1 && trace.injected.is_empty() {
                break;
            }
            current.evidences = next;
            current.response = trace.response.clone();
            current.traces.push(trace);
        }
        Ok(current)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{ChatRequest, ConstantNli, FnChat, FnNli, ScriptedNli};
    use crate::registry::{Evidence, Turn};
    use crate::tokens::RelevanceScore;

    fn persona() -> SourceId {
        SourceId::new("PERSONA").unwrap()
    }

    fn ev(id: &str, tenths: u8) -> ScoredEvidence {
        ScoredEvidence {
            evidence: Evidence::new(id, persona(), format!("text of {id}")),
            score: RelevanceScore::from_tenths(tenths).unwrap(),
            scorer: crate::retrieval::ScorerKind::Bm25,
        }
    }

    struct Fixed(Vec<ScoredEvidence>);

    impl Retriever for Fixed {
        fn rank(&self, _: &DialogueContext, source: &SourceId) -> Result<Vec<ScoredEvidence>, RetrievalError> {
            Ok(self.0.iter().filter(|e| &e.evidence.source == source).cloned().collect())
        }
    }

    fn ctx() -> DialogueContext {
        DialogueContext::new(vec![Turn::user("tea?")]).unwrap()
    }

    fn providers(nli: impl NliScorer + 'static) -> Providers {
        let calls = std::sync::atomic::AtomicUsize::new(0);
        Providers::default().with_nli(nli).with_chat(FnChat(move |_: &ChatRequest| {
            let n = calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            Ok(format!("regenerated {n}"))
        }))
    }

    #[test]
    fn combined_is_elementwise_product() {
        let items = [ev("a", 8), ev("b", 10)];
        let nli = ScriptedNli::new().with("text of a", "r", 1.0).with("text of b", "r", 0.5);
        assert_eq!(combined_scores(&items, "r", &nli).unwrap(), vec![0.8, 0.5]);
        let zero = [ev("a", 0)];
        assert_eq!(combined_scores(&zero, "r", &ConstantNli(0.9)).unwrap(), vec![0.0]);
        let s = combined_scores(&items, "r", &ConstantNli(1.0)).unwrap();
        assert_eq!(s, vec![0.8, 1.0]);
    }

    #[test]
    fn nli_failure_carries_index() {
        let items = [ev("a", 8), ev("b", 10)];
        let nli = FnNli(|p: &str, _: &str| {
            if p.ends_with('b') {
                Err(ProviderError::Timeout)
            } else {
                Ok(1.0)
            }
        });
        assert!(matches!(combined_scores(&items, "r", &nli), Err(RefineError::Nli { index: 1, .. })));
    }

    #[test]
    fn selection_rules() {
        assert_eq!(select_updates(&[0.8, 0.5, 0.9], 1).unwrap(), vec![1]);
        assert_eq!(select_updates(&[0.8, 0.5, 0.9], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(select_updates(&[0.8, 0.5, 0.9], 9).unwrap(), vec![0, 1, 2]);
        assert_eq!(select_updates(&[0.5, 0.5], 1).unwrap(), vec![0]);
        assert_eq!(select_updates(&[], 1).unwrap_err(), RefineError::Empty);
    }

    #[test]
    fn replaces_lowest_with_novel_evidence() {
        let current = [ev("a", 9), ev("b", 2)];
        let pool = Fixed(vec![ev("a", 9), ev("c", 7), ev("b", 2)]);
        let p = providers(ConstantNli(1.0));
        let t = PromptTemplates::default();
        let r = Refiner {
            providers: &p,
            retriever: &pool,
            templates: &t,
            params: GenParams::default(),
            config: RefinementConfig::default(),
        };
        let plan = Plan::new(vec![persona()]).unwrap();
        let out = r.refine_once(&ctx(), &plan, &current, "old").unwrap();
        assert_eq!(out.evidences[1].evidence.id, "c");
        assert_eq!(out.evidences[0].evidence.id, "a");
        assert_eq!(out.response, "regenerated 0");
        assert_eq!(out.traces.len(), 1);
        assert_eq!(out.traces[0].evicted, vec!["b"]);
        assert_eq!(out.traces[0].injected, vec!["c"]);
    }

    #[test]
    fn null_plan_and_exhaustion() {
        let current = [ev("a", 9), ev("b", 2)];
        let p = providers(ConstantNli(1.0));
        let t = PromptTemplates::default();
        let pool = Fixed(vec![ev("a", 9), ev("b", 2)]);
        let r = Refiner {
            providers: &p,
            retriever: &pool,
            templates: &t,
            params: GenParams::default(),
            config: RefinementConfig { steps: 3, ..RefinementConfig::default() },
        };
        let null = r.refine_once(&ctx(), &Plan::null(), &[], "same").unwrap();
        assert_eq!((null.response.as_str(), null.traces.len()), ("same", 0));

        let plan = Plan::new(vec![persona()]).unwrap();
        let out = r.refine_multi(&ctx(), &plan, &current, "old").unwrap();
        assert_eq!(out.evidences, current.to_vec());
        assert_eq!(out.response, "old");
        assert_eq!(out.traces.len(), 1);
        assert!(out.traces[0].pool_exhausted());
    }

    #[test]
    fn multi_step_stops_when_pool_runs_dry() {
        let current = [ev("a", 9), ev("b", 2)];
        let pool = Fixed(vec![ev("a", 9), ev("c", 7), ev("b", 2)]);
        let p = providers(ConstantNli(1.0));
        let t = PromptTemplates::default();
        let r = Refiner {
            providers: &p,
            retriever: &pool,
            templates: &t,
            params: GenParams::default(),
            config: RefinementConfig { steps: 3, ..RefinementConfig::default() },
        };
        let plan = Plan::new(vec![persona()]).unwrap();
        let out = r.refine_multi(&ctx(), &plan, &current, "old").unwrap();
        assert_eq!(out.traces.len(), 1);
        assert_eq!(out.evidences[1].evidence.id, "c");
    }
}
