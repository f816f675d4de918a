//! Pipeline stages and the commands that run them over a corpus.
//!
//! Every command loads the corpus, runs its stage per sample on a bounded
//! worker pool, writes fixed-name artifacts under the output directory and
//! records per-sample failures in `errors.jsonl`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ConfigError, Grounding, RunConfig};
use crate::corpus::{corpus_stats, load_corpus, CorpusError, CorpusStats, Sample};
use crate::evalkit::report::{RecallRow, RecallTable, BLEU_VARIANT};
use crate::evalkit::{
    bleu1, consistency_rate, f1_per_class, retrieval_role, rouge_l, ClassScore, EvalReport, GroundingRole,
    RetrievalRole,
};
use crate::labels::{precompute_labels, LabelCache, LabelSummary};
use crate::plan::{ClassScheme, Plan};
use crate::planner::{plan, Demonstration, PlanningInput, PlannerBackend, PlannerConfig};
use crate::providers::Providers;
use crate::reader::{assemble_input, emit_training_record, generate_response};
use crate::refine::{PoolRetriever, RefinementTrace, Refiner};
use crate::retrieval::{recall_at_k, retrieve_chain, RankedQuery, RecallReport, RetrievalConfig, ScoredEvidence, Scoring};
use crate::templates::PromptTemplates;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{stage}: {message}")]
    Runtime { stage: &'static str, message: String },
    #[error("{count} sample(s) failed; see {}", log.display())]
    SampleFailures { count: usize, log: PathBuf },
}

impl CommandError {
    /// 2 for bad configuration or input, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) | CommandError::Corpus(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub id: String,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub id: String,
    pub plan: Plan,
    pub gold: Plan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub id: String,
    pub plan: Plan,
    pub evidence: Vec<ScoredEvidence>,
    pub response: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: String,
    #[serde(flatten)]
    pub trace: RefinementTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub source: String,
    pub role: String,
    pub ranked: Vec<String>,
    pub gold: Vec<String>,
}

/// Recall per role, plus every ranked query behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEval {
    pub scorer: String,
    pub k: usize,
    pub columns: Vec<String>,
    pub recall: BTreeMap<String, RecallReport>,
    pub queries: Vec<QueryRecord>,
}

impl RetrievalEval {
    pub fn table(&self) -> RecallTable {
        RecallTable {
            k: self.k,
            columns: self.columns.clone(),
            rows: vec![RecallRow { method: self.scorer.clone(), recall: self.recall.clone() }],
        }
    }
}

/// Output of a stage over the corpus: results in sample-id order and the
/// samples that failed.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput<T> {
    pub items: Vec<T>,
    pub errors: Vec<ErrorRecord>,
}

pub const STATS: &str = "stats.json";
pub const LABELS: &str = "labels.jsonl";
pub const LABEL_SUMMARY: &str = "label_summary.json";
pub const RECORDS: &str = "records.jsonl";
pub const PLANS: &str = "plans.jsonl";
pub const PLANNING: &str = "planning.json";
pub const RETRIEVAL: &str = "retrieval.json";
pub const RETRIEVAL_CSV: &str = "retrieval.csv";
pub const RESPONSES: &str = "responses.jsonl";
pub const REFINED: &str = "refined.jsonl";
pub const TRACES: &str = "traces.jsonl";
pub const REPORT: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const ERRORS: &str = "errors.jsonl";

/// A loaded run: configuration, corpus (sorted by id), providers and the
/// worker pool.
pub struct Run {
    pub config: RunConfig,
    pub samples: Vec<Sample>,
    pub providers: Providers,
    pub templates: PromptTemplates,
    pub scheme: ClassScheme,
    demonstrations: Vec<Demonstration>,
    replayed_plans: Option<BTreeMap<String, Plan>>,
    pool: rayon::ThreadPool,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CommandError {
    CommandError::Io { path: path.to_owned(), message: e.to_string() }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CommandError> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CommandError> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("artifact serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CommandError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CommandError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| io_err(path, format!("line {}: {e}", i + 1))))
        .collect()
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

impl Run {
    /// Validates `config`, loads the corpus and builds providers from the
    /// configuration.
    pub fn prepare(config: RunConfig) -> Result<Run, CommandError> {
        config.validate()?;
        let samples = Self::load_samples(&config)?;
        let templates = config.templates()?;
        let providers = config.providers(&samples, &templates)?;
        Self::assemble(config, samples, templates, providers)
    }

    /// Like [`Run::prepare`] but with caller-supplied providers.
    pub fn with_providers(config: RunConfig, providers: Providers) -> Result<Run, CommandError> {
        config.validate()?;
        let samples = Self::load_samples(&config)?;
        let templates = config.templates()?;
        Self::assemble(config, samples, templates, providers)
    }

    fn load_samples(config: &RunConfig) -> Result<Vec<Sample>, CommandError> {
        let mut samples = load_corpus(&config.corpus)?;
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(samples)
    }

    fn assemble(
        config: RunConfig,
        samples: Vec<Sample>,
        templates: PromptTemplates,
        providers: Providers,
    ) -> Result<Run, CommandError> {
        let scheme = config.scheme()?;
        let demonstrations = match &config.planner.demonstrations {
            Some(p) => load_corpus(p)?
                .into_iter()
                .map(|s| Demonstration { context: s.context, plan: s.label_plan })
                .collect(),
            None => Vec::new(),
        };
        let replayed_plans = match &config.planner.plans_file {
            Some(p) => Some(read_jsonl::<PlanRecord>(p)?.into_iter().map(|r| (r.id, r.plan)).collect()),
            None => None,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .build()
            .map_err(|e| CommandError::Runtime { stage: "setup", message: e.to_string() })?;
        Ok(Run { config, samples, providers, templates, scheme, demonstrations, replayed_plans, pool })
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    fn ensure_out_dir(&self) -> Result<(), CommandError> {
        fs::create_dir_all(&self.config.out_dir).map_err(|e| io_err(&self.config.out_dir, e))
    }

    pub fn sample(&self, id: &str) -> Option<&Sample> {
        self.samples.binary_search_by(|s| s.id.as_str().cmp(id)).ok().map(|i| &self.samples[i])
    }

    fn per_sample<T, R, F>(&self, items: &[T], stage: &'static str, f: F) -> StageOutput<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> Result<R, (String, String)> + Sync + Send,
    {
        let results: Vec<Result<R, (String, String)>> = self.pool.install(|| items.par_iter().map(&f).collect());
        let mut out = StageOutput { items: Vec::new(), errors: Vec::new() };
        for r in results {
            match r {
                Ok(v) => out.items.push(v),
                Err((id, error)) => out.errors.push(ErrorRecord { id, stage: stage.to_owned(), error }),
            }
        }
        out
    }

    pub fn scoring<'a>(&'a self, sample: &'a Sample) -> Scoring<'a> {
        Scoring { providers: &self.providers, templates: &self.templates, gold: Some(&sample.label_evidence) }
    }

    pub fn planner_config(&self) -> PlannerConfig {
        PlannerConfig {
            backend: self.config.planner.backend,
            demonstrations: self.demonstrations.clone(),
            fallback: self.config.planner.fallback,
            params: self.config.planner.params,
        }
    }

    // ---- stages ----

    pub fn plan_sample(&self, sample: &Sample) -> Result<PlanRecord, String> {
        let cfg = self.planner_config();
        let replayed = self.replayed_plans.as_ref().map(|m| m.get(&sample.id));
        let gold = match (cfg.backend, replayed) {
            (PlannerBackend::Oracle, Some(Some(p))) => p,
            (PlannerBackend::Oracle, Some(None)) => return Err("no replayed plan for this sample".into()),
            _ => &sample.label_plan,
        };
        let input = PlanningInput { context: &sample.context, registry: &sample.registry, gold: Some(gold) };
        let outcome = plan(input, &cfg, &self.providers, &self.templates).map_err(|e| e.to_string())?;
        Ok(PlanRecord {
            id: sample.id.clone(),
            plan: outcome.plan,
            gold: sample.label_plan.clone(),
            raw: outcome.raw,
            dropped: outcome.dropped,
            warning: outcome.warning,
        })
    }

    pub fn plan_all(&self) -> StageOutput<PlanRecord> {
        self.per_sample(&self.samples, "plan", |s| self.plan_sample(s).map_err(|e| (s.id.clone(), e)))
    }

    /// Per-class F1 of plan records against their gold plans.
    pub fn planning_scores(&self, plans: &[PlanRecord]) -> BTreeMap<String, ClassScore> {
        let pred: Vec<Plan> = plans.iter().map(|r| r.plan.clone()).collect();
        let gold: Vec<Plan> = plans.iter().map(|r| r.gold.clone()).collect();
        f1_per_class(&pred, &gold, &self.scheme).expect("equal lengths")
    }

    /// Ranks each gold-planned source of every non-NULL sample with the
    /// configured scorer, using gold plans for the dependency chain.
    pub fn retrieval_eval(&self) -> StageOutput<RetrievalEval> {
        let k = self.config.eval.recall_k;
        let cfg = RetrievalConfig { top_n: self.config.retrieval.top_n.max(k), ..self.config.retrieval.clone() };
        let with_plan: Vec<&Sample> = self.samples.iter().filter(|s| !s.label_plan.is_null()).collect();
        let ranked = self.per_sample(&with_plan, "retrieve", |s| {
            let chain = retrieve_chain(&s.context, &s.label_plan, &s.registry, &cfg, &self.scoring(s))
                .map_err(|e| (s.id.clone(), e.to_string()))?;
            Ok(s.label_plan
                .sources()
                .iter()
                .filter(|src| !s.gold_ids(src).is_empty())
                .map(|src| {
                    let role = retrieval_role(&s.label_plan, src, &self.scheme, self.config.eval.roles_by_class);
                    let ranked = chain.get(src).unwrap_or(&[]).iter().map(|e| e.evidence.id.clone()).collect();
                    (role, QueryRecord {
                        id: s.id.clone(),
                        source: src.to_string(),
                        role: String::new(),
                        ranked,
                        gold: s.gold_ids(src).to_vec(),
                    })
                })
                .collect::<Vec<_>>())
        });
        let mut by_role: BTreeMap<RetrievalRole, Vec<RankedQuery>> = BTreeMap::new();
        let mut queries = Vec::new();
        for (role, mut q) in ranked.items.into_iter().flatten() {
            by_role.entry(role.clone()).or_default().push(RankedQuery { ranked: q.ranked.clone(), gold: q.gold.clone() });
            q.role = role.name;
            queries.push(q);
        }
        let columns = by_role.keys().map(|r| r.name.clone()).collect();
        let recall = by_role
            .into_iter()
            .map(|(role, qs)| (role.name, recall_at_k(&qs, k).expect("k >= 1")))
            .collect();
        StageOutput {
            items: vec![RetrievalEval { scorer: self.config.retrieval.scorer.as_str().to_owned(), k, columns, recall, queries }],
            errors: ranked.errors,
        }
    }

    pub fn generate_sample(&self, sample: &Sample, plan: &Plan) -> Result<ResponseRecord, String> {
        let chain = retrieve_chain(&sample.context, plan, &sample.registry, &self.config.retrieval, &self.scoring(sample))
            .map_err(|e| e.to_string())?;
        let evidence = chain.flatten();
        let prompt = assemble_input(&sample.context, plan, &evidence, &self.templates).map_err(|e| e.to_string())?;
        let chat = self.providers.chat().map_err(|e| e.to_string())?;
        let response = generate_response(&prompt, chat, &self.templates, self.config.generation).map_err(|e| e.to_string())?;
        Ok(ResponseRecord {
            id: sample.id.clone(),
            plan: plan.clone(),
            evidence,
            response,
            reference: sample.reference_response.clone(),
        })
    }

    pub fn generate_all(&self, plans: &[PlanRecord]) -> StageOutput<ResponseRecord> {
        let pairs: Vec<(&Sample, &PlanRecord)> =
            plans.iter().filter_map(|p| self.sample(&p.id).map(|s| (s, p))).collect();
        self.per_sample(&pairs, "generate", |(s, p)| self.generate_sample(s, &p.plan).map_err(|e| (s.id.clone(), e)))
    }

    pub fn refine_sample(&self, sample: &Sample, record: &ResponseRecord) -> Result<(ResponseRecord, Vec<TraceRecord>), String> {
        let retriever = PoolRetriever { registry: &sample.registry, config: &self.config.retrieval, scoring: self.scoring(sample) };
        let refiner = Refiner {
            providers: &self.providers,
            retriever: &retriever,
            templates: &self.templates,
            params: self.config.generation,
            config: self.config.refine,
        };
        let out = refiner
            .refine_multi(&sample.context, &record.plan, &record.evidence, &record.response)
            .map_err(|e| e.to_string())?;
        let traces = out.traces.into_iter().map(|trace| TraceRecord { id: sample.id.clone(), trace }).collect();
        Ok((ResponseRecord { evidence: out.evidences, response: out.response, ..record.clone() }, traces))
    }

    pub fn refine_all(&self, responses: &[ResponseRecord]) -> (StageOutput<ResponseRecord>, Vec<TraceRecord>) {
        let pairs: Vec<(&Sample, &ResponseRecord)> =
            responses.iter().filter_map(|r| self.sample(&r.id).map(|s| (s, r))).collect();
        let out = self.per_sample(&pairs, "refine", |(s, r)| self.refine_sample(s, r).map_err(|e| (s.id.clone(), e)));
        let mut items = Vec::new();
        let mut traces = Vec::new();
        for (r, t) in out.items {
            items.push(r);
            traces.extend(t);
        }
        (StageOutput { items, errors: out.errors }, traces)
    }

    fn grounding_pairs(&self, responses: &[ResponseRecord]) -> BTreeMap<GroundingRole, Vec<(String, String)>> {
        let mut pools: BTreeMap<GroundingRole, Vec<(String, String)>> = BTreeMap::new();
        for r in responses {
            let Some(sample) = self.sample(&r.id) else { continue };
            let mut texts: BTreeMap<GroundingRole, Vec<&str>> = BTreeMap::new();
            match self.config.eval.grounding {
                Grounding::Gold => {
                    for (source, ids) in &sample.label_evidence {
                        for id in ids {
                            if let Some(e) = sample.registry.evidence(id) {
                                texts.entry(self.config.eval.roles.role(source)).or_default().push(&e.text);
                            }
                        }
                    }
                }
                Grounding::Predicted => {
                    for e in &r.evidence {
                        texts.entry(self.config.eval.roles.role(&e.evidence.source)).or_default().push(&e.evidence.text);
                    }
                }
            }
            for (role, t) in texts {
                pools.entry(role).or_default().push((t.join(" "), r.response.clone()));
            }
        }
        pools
    }

    /// Aggregates stage outputs into the report.
    pub fn report(
        &self,
        plans: &[PlanRecord],
        retrieval: Option<&RetrievalEval>,
        responses: &[ResponseRecord],
    ) -> Result<EvalReport, CommandError> {
        let ev = &self.config.eval;
        let mut skipped = BTreeMap::new();
        let missing = |n: usize| self.samples.len().saturating_sub(n);
        if missing(plans.len()) > 0 {
            skipped.insert("planning".to_owned(), missing(plans.len()));
        }
        if missing(responses.len()) > 0 {
            skipped.insert("generation".to_owned(), missing(responses.len()));
        }
        let bleu: Vec<f64> = responses.iter().map(|r| bleu1(&r.response, &r.reference, ev.tokenizer)).collect();
        let rouge: Vec<f64> = responses.iter().map(|r| rouge_l(&r.response, &r.reference, ev.tokenizer)).collect();

        let (mut pc, mut kc) = (None, None);
        match self.providers.nli() {
            Ok(nli) => {
                for (role, pairs) in self.grounding_pairs(responses) {
                    let rep = consistency_rate(&pairs, nli, ev.threshold)
                        .map_err(|e| CommandError::Runtime { stage: "consistency", message: e.to_string() })?;
                    match role {
                        GroundingRole::Persona => pc = rep.rate,
                        GroundingRole::Knowledge => kc = rep.rate,
                    }
                }
            }
            Err(_) => {
                skipped.insert("consistency-no-nli".to_owned(), responses.len());
            }
        }
        if let Some(r) = retrieval {
            let skipped_queries: usize = r.recall.values().map(|x| x.skipped).sum();
            if skipped_queries > 0 {
                skipped.insert("retrieval-empty-gold".to_owned(), skipped_queries);
            }
        }
        let label = ev.label.clone().unwrap_or_else(|| {
            format!(
                "{}/{}/top{}",
                serde_json::to_value(self.config.planner.backend).expect("enum").as_str().unwrap_or("?"),
                self.config.retrieval.scorer.as_str(),
                self.config.retrieval.top_n
            )
        });
        Ok(EvalReport {
            label,
            n_samples: self.samples.len(),
            planning: self.planning_scores(plans),
            recall_k: ev.recall_k,
            recall: retrieval.map(|r| r.recall.clone()).unwrap_or_default(),
            bleu1: mean(&bleu),
            rouge_l: mean(&rouge),
            bleu_variant: BLEU_VARIANT.to_owned(),
            tokenizer: ev.tokenizer,
            persona_consistency: pc,
            knowledge_consistency: kc,
            consistency_threshold: ev.threshold,
            skipped,
        })
    }

    fn finish(&self, errors: &[ErrorRecord]) -> Result<(), CommandError> {
        let path = self.out_path(ERRORS);
        if errors.is_empty() {
            if path.exists() {
                fs::remove_file(&path).map_err(|e| io_err(&path, e))?;
            }
            return Ok(());
        }
        write_jsonl(&path, errors)?;
        Err(CommandError::SampleFailures { count: errors.iter().map(|e| &e.id).collect::<BTreeSet<_>>().len(), log: path })
    }

    // ---- commands ----

    pub fn stats(&self) -> Result<CorpusStats, CommandError> {
        self.ensure_out_dir()?;
        let stats = corpus_stats(&self.samples, &self.scheme)?;
        write_json(&self.out_path(STATS), &stats)?;
        Ok(stats)
    }

    pub fn label(&self) -> Result<LabelSummary, CommandError> {
        self.ensure_out_dir()?;
        let cache_path = self.config.label_cache_path();
        let summary = self
            .pool
            .install(|| precompute_labels(&self.samples, &self.config.label_config(), &self.providers, &self.templates, &cache_path))
            .map_err(|e| CommandError::Runtime { stage: "label", message: e.to_string() })?;
        write_json(&self.out_path(LABEL_SUMMARY), &summary)?;
        let mut errors: Vec<ErrorRecord> = summary
            .failures
            .iter()
            .map(|f| ErrorRecord { id: f.sample_id.clone(), stage: "label".into(), error: format!("{}: {}", f.evidence_id, f.error) })
            .collect();
        if self.config.labels.emit_records {
            let cache = LabelCache::load(&cache_path).map_err(|e| io_err(&cache_path, e))?;
            let out = self.per_sample(&self.samples, "records", |s| {
                emit_training_record(s, &cache, self.config.labels.scorer, self.config.seed, &self.templates)
                    .map_err(|e| (s.id.clone(), e.to_string()))
            });
            write_jsonl(&self.out_path(RECORDS), &out.items)?;
            errors.extend(out.errors);
        }
        self.finish(&errors)?;
        Ok(summary)
    }

    fn plans(&self, errors: &mut Vec<ErrorRecord>) -> Result<Vec<PlanRecord>, CommandError> {
        if self.config.eval.reuse_artifacts {
            return read_jsonl(&self.out_path(PLANS));
        }
        let out = self.plan_all();
        errors.extend(out.errors);
        Ok(out.items)
    }

    pub fn plan_eval(&self) -> Result<BTreeMap<String, ClassScore>, CommandError> {
        self.ensure_out_dir()?;
        let out = self.plan_all();
        write_jsonl(&self.out_path(PLANS), &out.items)?;
        let scores = self.planning_scores(&out.items);
        write_json(&self.out_path(PLANNING), &scores)?;
        self.finish(&out.errors)?;
        Ok(scores)
    }

    pub fn retrieve_eval(&self) -> Result<RetrievalEval, CommandError> {
        self.ensure_out_dir()?;
        let mut out = self.retrieval_eval();
        let eval = out.items.remove(0);
        write_json(&self.out_path(RETRIEVAL), &eval)?;
        fs::write(self.out_path(RETRIEVAL_CSV), eval.table().to_csv()).map_err(|e| io_err(&self.out_path(RETRIEVAL_CSV), e))?;
        self.finish(&out.errors)?;
        Ok(eval)
    }

    pub fn generate(&self) -> Result<Vec<ResponseRecord>, CommandError> {
        self.ensure_out_dir()?;
        let mut errors = Vec::new();
        let plans = self.plans(&mut errors)?;
        let out = self.generate_all(&plans);
        write_jsonl(&self.out_path(RESPONSES), &out.items)?;
        errors.extend(out.errors);
        self.finish(&errors)?;
        Ok(out.items)
    }

    fn responses(&self, errors: &mut Vec<ErrorRecord>) -> Result<Vec<ResponseRecord>, CommandError> {
        if self.config.eval.reuse_artifacts {
            return read_jsonl(&self.out_path(RESPONSES));
        }
        let plans = self.plans(errors)?;
        let out = self.generate_all(&plans);
        errors.extend(out.errors);
        Ok(out.items)
    }

    pub fn refine(&self) -> Result<(Vec<ResponseRecord>, Vec<TraceRecord>), CommandError> {
        self.ensure_out_dir()?;
        let mut errors = Vec::new();
        let responses = self.responses(&mut errors)?;
        let (out, traces) = self.refine_all(&responses);
        write_jsonl(&self.out_path(REFINED), &out.items)?;
        write_jsonl(&self.out_path(TRACES), &traces)?;
        errors.extend(out.errors);
        self.finish(&errors)?;
        Ok((out.items, traces))
    }

    /// Runs every stage (or, with `reuse_artifacts`, reads their artifacts)
    /// and writes the report.
    pub fn eval(&self) -> Result<EvalReport, CommandError> {
        self.ensure_out_dir()?;
        let reuse = self.config.eval.reuse_artifacts;
        let mut errors = Vec::new();
        let plans = self.plans(&mut errors)?;
        let retrieval = if reuse {
            read_json::<RetrievalEval>(&self.out_path(RETRIEVAL))?
        } else {
            let mut out = self.retrieval_eval();
            errors.append(&mut out.errors);
            out.items.remove(0)
        };
        let responses = if reuse && self.config.eval.refine {
            read_jsonl(&self.out_path(REFINED))?
        } else {
            let generated = if reuse {
                read_jsonl(&self.out_path(RESPONSES))?
            } else {
                let out = self.generate_all(&plans);
                errors.extend(out.errors);
                out.items
            };
            if self.config.eval.refine {
                let (out, traces) = self.refine_all(&generated);
                errors.extend(out.errors);
                write_jsonl(&self.out_path(TRACES), &traces)?;
                if !reuse {
                    write_jsonl(&self.out_path(RESPONSES), &generated)?;
                }
                write_jsonl(&self.out_path(REFINED), &out.items)?;
                out.items
            } else {
                if !reuse {
                    write_jsonl(&self.out_path(RESPONSES), &generated)?;
                }
                generated
            }
        };
        if !reuse {
            write_jsonl(&self.out_path(PLANS), &plans)?;
            write_json(&self.out_path(RETRIEVAL), &retrieval)?;
        }
        let report = self.report(&plans, Some(&retrieval), &responses)?;
        report.write_json(self.out_path(REPORT)).map_err(|e| io_err(&self.out_path(REPORT), e))?;
        let mut csv = fs::File::create(self.out_path(REPORT_CSV)).map_err(|e| io_err(&self.out_path(REPORT_CSV), e))?;
        writeln!(csv, "{}\n{}", crate::evalkit::CSV_HEADER, report.csv_row()).map_err(|e| io_err(&self.out_path(REPORT_CSV), e))?;
        self.finish(&errors)?;
        Ok(report)
    }
}
