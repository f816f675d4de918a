//! JSONL dialogue corpora: loading with validation, saving, and statistics.
//!
//! One sample per line:
//!
//! ```json
//! {"id": "s1",
//!  "context": [{"role": "user", "text": "..."}],
//!  "sources": {"PERSONA": {"depends_on": [], "docs": [{"id": "p1", "text": "..."}]}},
//!  "label_plan": ["PERSONA"],
//!  "label_evidence": {"PERSONA": ["p1"]},
//!  "response": "..."}
//! ```
//!
//! `label_plan: []` is the `NULL` decision. Sources may optionally carry a
//! `description`, and documents optional `links` to prerequisite evidence.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::plan::{validate_plan, ClassScheme, Plan, PlanError, PlanViolation};
use crate::registry::{DialogueContext, Evidence, RegistryError, SourceEntry, SourceId, SourceRegistry, Turn};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SampleError {
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("label_plan names source {0} which is not in the sample's sources")]
    UnknownPlanSource(String),
    #[error("label_plan breaks source dependencies: {}", describe_violations(.0))]
    Dependency(Vec<PlanViolation>),
    #[error("label_evidence cites unknown evidence id {id:?} under {source_name}")]
    UnknownEvidence { source_name: String, id: String },
    #[error("label_evidence source {0} is not in label_plan")]
    EvidenceSourceNotPlanned(String),
}

fn describe_violations(v: &[PlanViolation]) -> String {
    v.iter()
        .map(|v| match &v.dependency {
            Some(d) => format!("{} needs {} first", v.source, d),
            None => format!("{} unknown", v.source),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}{}: {error}", sample_id.as_ref().map(|s| format!(" (sample {s})")).unwrap_or_default())]
pub struct LineError {
    pub line: usize,
    pub sample_id: Option<String>,
    pub error: SampleError,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{} invalid line(s) in {path}; first: {}", errors.len(), errors[0])]
    Invalid { path: PathBuf, errors: Vec<LineError> },
    #[error("corpus is empty")]
    Empty,
}

/// One dialogue turn to respond to, with its knowledge pools and gold labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub context: DialogueContext,
    pub registry: SourceRegistry,
    pub label_plan: Plan,
    pub label_evidence: BTreeMap<SourceId, Vec<String>>,
    pub reference_response: String,
}

impl Sample {
    /// Gold evidence ids for one source (empty when none are labelled).
    pub fn gold_ids(&self, source: &SourceId) -> &[String] {
        self.label_evidence.get(source).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn from_json(line: &str) -> Result<Sample, (Option<String>, SampleError)> {
        let raw: RawSample = serde_json::from_str(line).map_err(|e| (None, SampleError::Json(e.to_string())))?;
        let id = raw.id.clone();
        raw.into_sample().map_err(|e| (Some(id), e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&RawSample::from_sample(self)).expect("sample serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSample {
    id: String,
    context: Vec<Turn>,
    sources: BTreeMap<String, RawSource>,
    label_plan: Vec<String>,
    #[serde(default)]
    label_evidence: BTreeMap<String, Vec<String>>,
    response: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    #[serde(default)]
    depends_on: Vec<String>,
    docs: Vec<RawDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawDoc {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    links: Vec<String>,
}

fn nfc(s: &str) -> String {
    s.nfc().collect()
}

impl RawSample {
    fn into_sample(self) -> Result<Sample, SampleError> {
        let turns = self.context.into_iter().map(|t| Turn { role: t.role, text: nfc(&t.text) }).collect();
        let context = DialogueContext::new(turns)?;

        let mut sources = BTreeMap::new();
        for (name, raw) in self.sources {
            let id = SourceId::new(name)?;
            let depends_on = raw.depends_on.into_iter().map(SourceId::new).collect::<Result<_, _>>()?;
            let docs = raw
                .docs
                .into_iter()
                .map(|d| Evidence { id: d.id, source: id.clone(), text: nfc(&d.text), links: d.links })
                .collect();
            sources.insert(id, SourceEntry { description: raw.description, depends_on, docs });
        }
        let registry = SourceRegistry::new(sources)?;

        let mut plan_sources = Vec::new();
        for name in self.label_plan {
            match registry.lookup(&name) {
                Some(id) => plan_sources.push(id.clone()),
                None => return Err(SampleError::UnknownPlanSource(name)),
            }
        }
        let label_plan = Plan::new(plan_sources)?;
        validate_plan(&label_plan, &registry).map_err(SampleError::Dependency)?;

        let mut label_evidence = BTreeMap::new();
        for (name, ids) in self.label_evidence {
            let Some(source) = registry.lookup(&name).cloned() else {
                return Err(SampleError::EvidenceSourceNotPlanned(name));
            };
            if !label_plan.contains(&source) {
                return Err(SampleError::EvidenceSourceNotPlanned(name));
            }
            for id in &ids {
                let known = registry.evidence(id).is_some_and(|e| e.source == source);
                if !known {
                    return Err(SampleError::UnknownEvidence { source_name: name.clone(), id: id.clone() });
                }
            }
            label_evidence.insert(source, ids);
        }

        Ok(Sample {
            id: self.id,
            context,
            registry,
            label_plan,
            label_evidence,
            reference_response: nfc(&self.response),
        })
    }

    fn from_sample(s: &Sample) -> RawSample {
        let sources = s
            .registry
            .entries()
            .map(|(id, e)| {
                let raw = RawSource {
                    description: e.description.clone(),
                    depends_on: e.depends_on.iter().map(|d| d.to_string()).collect(),
                    docs: e
                        .docs
                        .iter()
                        .map(|d| RawDoc { id: d.id.clone(), text: d.text.clone(), links: d.links.clone() })
                        .collect(),
                };
                (id.to_string(), raw)
            })
            .collect();
        RawSample {
            id: s.id.clone(),
            context: s.context.turns().to_vec(),
            sources,
            label_plan: s.label_plan.sources().iter().map(|p| p.to_string()).collect(),
            label_evidence: s.label_evidence.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            response: s.reference_response.clone(),
        }
    }
}

/// Parses corpus text; blank lines are skipped. All invalid lines are
/// reported and no sample is returned unless every line is valid.
pub fn parse_corpus(text: &str) -> Result<Vec<Sample>, Vec<LineError>> {
    let mut samples = Vec::new();
    let mut errors = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match Sample::from_json(line) {
            Ok(s) => samples.push(s),
            Err((sample_id, error)) => errors.push(LineError { line: idx + 1, sample_id, error }),
        }
    }
    if errors.is_empty() {
        Ok(samples)
    } else {
        Err(errors)
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Sample>, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let file = File::open(path).map_err(io_err)?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(io_err)?);
        text.push('\n');
    }
    parse_corpus(&text).map_err(|errors| CorpusError::Invalid { path: path.to_path_buf(), errors })
}

pub fn save_corpus(path: impl AsRef<Path>, samples: &[Sample]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for s in samples {
        writeln!(out, "{}", s.to_json())?;
    }
    out.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_samples: usize,
    /// Class label (or raw plan signature when the scheme has no entry) to count.
    pub plan_histogram: BTreeMap<String, usize>,
    /// Share of samples whose gold plan is not `NULL`, in percent.
    pub pct_with_source: f64,
}

pub fn corpus_stats(samples: &[Sample], scheme: &ClassScheme) -> Result<CorpusStats, CorpusError> {
    if samples.is_empty() {
        return Err(CorpusError::Empty);
    }
    let plans: Vec<&Plan> = samples.iter().map(|s| &s.label_plan).collect();
    Ok(plan_stats(&plans, scheme))
}

pub(crate) fn plan_stats(plans: &[&Plan], scheme: &ClassScheme) -> CorpusStats {
    let mut plan_histogram = BTreeMap::new();
    let mut with_source = 0usize;
    for plan in plans {
        *plan_histogram.entry(scheme.classify(plan)).or_insert(0) += 1;
        if !plan.is_null() {
            with_source += 1;
        }
    }
    CorpusStats {
        n_samples: plans.len(),
        plan_histogram,
        pct_with_source: 100.0 * with_source as f64 / plans.len() as f64,
    }
}
