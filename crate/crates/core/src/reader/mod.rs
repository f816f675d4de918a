//! Generation input assembly, evidence shuffling, response generation and
//! training-record emission.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sample;
use crate::hash::derive_seed;
use crate::labels::{candidates, LabelCache};
use crate::plan::{serialize_plan, Plan};
use crate::providers::{ChatProvider, ChatRequest, GenParams, Message, ProviderError};
use crate::registry::DialogueContext;
use crate::retrieval::{ScoredEvidence, ScorerKind};
use crate::templates::PromptTemplates;
use crate::tokens::{EVIDENCE_END, EVIDENCE_START, SOURCE_END};

pub mod mask;

pub use mask::{build_attention_mask, AttentionMask, MaskExport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReaderError {
    #[error("evidence {evidence_id} comes from {source_name}, which is not in the plan")]
    UnplannedSource { evidence_id: String, source_name: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("generator returned an empty response")]
    EmptyResponse,
    #[error("no cached {scorer} score for sample {sample_id}, evidence {evidence_id}")]
    MissingLabel { sample_id: String, evidence_id: String, scorer: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentKind {
    Context,
    SourceHeader,
    Evidence,
    Sim,
    ResponseSlot,
}

/// A half-open byte range of the assembled text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    /// Evidence index for `Evidence` and `Sim` segments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn label(&self) -> String {
        match (self.kind, self.index) {
            (SegmentKind::Context, _) => "context".into(),
            (SegmentKind::SourceHeader, _) => "source-header".into(),
            (SegmentKind::Evidence, Some(i)) => format!("evidence_{i}"),
            (SegmentKind::Sim, Some(i)) => format!("sim_{i}"),
            (SegmentKind::ResponseSlot, _) => "response-slot".into(),
            (_, None) => unreachable!("indexed segment without index"),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Rendered generation input and the segment layout of its text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembledPrompt {
    pub text: String,
    pub segments: Vec<Segment>,
}

impl AssembledPrompt {
    pub fn segment_text(&self, segment: &Segment) -> &str {
        &self.text[segment.start..segment.end]
    }

    pub fn n_evidence(&self) -> usize {
        self.segments.iter().filter(|s| s.kind == SegmentKind::Evidence).count()
    }

    /// Index of the segment containing byte `offset`.
    pub fn segment_at(&self, offset: usize) -> Option<usize> {
        self.segments.iter().position(|s| s.start <= offset && offset < s.end)
    }

    /// Fills the response slot with `" " + response`.
    pub fn with_response(&self, response: &str) -> AssembledPrompt {
        let mut out = self.clone();
        let start = out.text.len();
        out.text.push(' ');
        out.text.push_str(response);
        let slot = out.segments.last_mut().expect("response slot is always present");
        slot.start = start;
        slot.end = out.text.len();
        out
    }
}

struct Builder {
    text: String,
    segments: Vec<Segment>,
}

impl Builder {
    fn push(&mut self, kind: SegmentKind, index: Option<usize>, piece: &str) {
        let start = self.text.len();
        self.text.push_str(piece);
        self.segments.push(Segment { kind, index, start, end: self.text.len() });
    }
}

/// Context lines, the plan header, then one evidence block followed by its
/// score per evidence, in the given order.
pub fn assemble_input(
    context: &DialogueContext,
    plan: &Plan,
    evidences: &[ScoredEvidence],
    templates: &PromptTemplates,
) -> Result<AssembledPrompt, ReaderError> {
    if let Some(bad) = evidences.iter().find(|e| !plan.contains(&e.evidence.source)) {
        return Err(ReaderError::UnplannedSource {
            evidence_id: bad.evidence.id.clone(),
            source_name: bad.evidence.source.to_string(),
        });
    }
    let mut b = Builder { text: String::new(), segments: Vec::new() };
    b.push(SegmentKind::Context, None, &templates.render_context(context));
    b.push(SegmentKind::SourceHeader, None, &serialize_plan(plan));
    for (i, e) in evidences.iter().enumerate() {
        b.push(SegmentKind::Evidence, Some(i), &format!(" {EVIDENCE_START} {} {EVIDENCE_END}", e.evidence.text));
        b.push(SegmentKind::Sim, Some(i), &format!(" {}", e.score.token()));
    }
    b.push(SegmentKind::ResponseSlot, None, "");
    Ok(AssembledPrompt { text: b.text, segments: b.segments })
}

/// Seeded uniform permutation; items keep their attached scores.
pub fn shuffle_evidence<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
    let mut out = items.to_vec();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}

pub fn generation_request(prompt: &AssembledPrompt, templates: &PromptTemplates, params: GenParams) -> ChatRequest {
    ChatRequest { messages: vec![Message::system(templates.generation.trim_end()), Message::user(&prompt.text)], params }
}

/// One chat call; trailing whitespace is trimmed.
pub fn generate_response(
    prompt: &AssembledPrompt,
    chat: &dyn ChatProvider,
    templates: &PromptTemplates,
    params: GenParams,
) -> Result<String, ReaderError> {
    params.validate()?;
    let reply = chat.chat(&generation_request(prompt, templates, params))?;
    let reply = reply.trim_end();
    if reply.trim().is_empty() {
        return Err(ReaderError::EmptyResponse);
    }
    Ok(reply.to_owned())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub input: String,
    pub target: String,
    pub mask: MaskExport,
}

impl TrainingRecord {
    /// The serialized plan at the start of the target.
    pub fn plan_segment(&self) -> &str {
        let end = self.target.find(SOURCE_END).map_or(self.target.len(), |i| i + SOURCE_END.len());
        &self.target[..end]
    }
}

/// Builds the supervised record for one sample: the context as input, and
/// the gold plan, shuffled candidate evidence with cached scores and the
/// reference response as target.
pub fn emit_training_record(
    sample: &Sample,
    cache: &LabelCache,
    scorer: ScorerKind,
    seed: u64,
    templates: &PromptTemplates,
) -> Result<TrainingRecord, ReaderError> {
    let mut scored = Vec::new();
    for e in candidates(sample) {
        let entry = cache.get(&sample.id, &e.id, scorer).ok_or_else(|| ReaderError::MissingLabel {
            sample_id: sample.id.clone(),
            evidence_id: e.id.clone(),
            scorer: scorer.as_str(),
        })?;
        scored.push(ScoredEvidence { evidence: e.clone(), score: entry.score, scorer });
    }
    let shuffled = shuffle_evidence(&scored, derive_seed(seed, &sample.id));
    let prompt = assemble_input(&sample.context, &sample.label_plan, &shuffled, templates)?
        .with_response(&sample.reference_response);
    let split = prompt.segments[0].end;
    let mask = build_attention_mask(&prompt).export(&prompt);
    Ok(TrainingRecord { input: prompt.text[..split].to_owned(), target: prompt.text[split..].to_owned(), mask })
}
