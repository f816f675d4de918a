//! Knowledge-source planning: which sources (possibly none) a turn needs and
//! in which order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::{parse_plan, serialize_plan, validate_plan, Plan, PlanError, PlanViolation};
use crate::providers::{ChatRequest, GenParams, Message, ProviderError, Providers};
use crate::registry::{DialogueContext, SourceRegistry};
use crate::templates::{fill, PromptTemplates};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlannerError {
    #[error("registry has no sources to plan over")]
    EmptyRegistry,
    #[error("in-context planning needs at least one demonstration")]
    MissingDemonstrations,
    #[error("oracle planning needs a gold plan")]
    MissingGold,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Parse(#[from] PlanError),
    #[error("planned sources break dependencies: {0:?}")]
    Invalid(Vec<PlanViolation>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerBackend {
    #[default]
    LlmZeroShot,
    LlmIcl,
    Oracle,
    AlwaysAll,
    AlwaysNull,
}

impl PlannerBackend {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "llm-zero-shot" | "zero-shot" => PlannerBackend::LlmZeroShot,
            "llm-icl" | "icl" => PlannerBackend::LlmIcl,
            "oracle" => PlannerBackend::Oracle,
            "always-all" => PlannerBackend::AlwaysAll,
            "always-null" => PlannerBackend::AlwaysNull,
            _ => return None,
        })
    }
}

/// What to do when model output cannot be turned into a valid plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fallback {
    #[default]
    Null,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub context: DialogueContext,
    pub plan: Plan,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlannerConfig {
    pub backend: PlannerBackend,
    pub demonstrations: Vec<Demonstration>,
    pub fallback: Fallback,
    pub params: GenParams,
}

impl PlannerConfig {
    pub fn new(backend: PlannerBackend) -> Self {
        PlannerConfig { backend, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.backend == PlannerBackend::LlmIcl && self.demonstrations.is_empty() {
            return Err(PlannerError::MissingDemonstrations);
        }
        Ok(())
    }
}

/// The decision for one turn plus what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub plan: Plan,
    /// Raw model output for LLM backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<String>,
    /// Set when the fallback replaced an unusable decision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl PlanOutcome {
    fn clean(plan: Plan) -> Self {
        PlanOutcome { plan, raw: None, dropped: Vec::new(), warning: None }
    }
}

fn describe_sources(registry: &SourceRegistry) -> String {
    registry
        .entries()
        .map(|(id, entry)| {
            let desc = entry.description.clone().unwrap_or_else(|| format!("knowledge source {id}"));
            let deps: Vec<&str> = entry.depends_on.iter().map(|d| d.as_str()).collect();
            if deps.is_empty() {
                format!("- {id}: {desc} (independent)")
            } else {
                format!("- {id}: {desc} (must come after {})", deps.join(", "))
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn build_planning_prompt(
    context: &DialogueContext,
    registry: &SourceRegistry,
    config: &PlannerConfig,
    templates: &PromptTemplates,
) -> Result<ChatRequest, PlannerError> {
    if registry.is_empty() {
        return Err(PlannerError::EmptyRegistry);
    }
    let demonstrations = match config.backend {
        PlannerBackend::LlmIcl => {
            let demos: Vec<String> = config
                .demonstrations
                .iter()
                .map(|d| {
                    fill(
                        &templates.demonstration,
                        &[
                            ("context", templates.render_context(&d.context).trim_end()),
                            ("plan", &serialize_plan(&d.plan)),
                        ],
                    )
                })
                .collect();
            format!("\n{}\n", demos.join("\n\n"))
        }
        _ => String::new(),
    };
    let prompt = fill(
        &templates.planning,
        &[
            ("sources", &describe_sources(registry)),
            ("demonstrations", &demonstrations),
            ("context", templates.render_context(context).trim_end()),
        ],
    );
    Ok(ChatRequest::new(vec![Message::user(prompt)], config.params)?)
}

/// Everything the planner may look at for one turn.
#[derive(Debug, Clone, Copy)]
pub struct PlanningInput<'a> {
    pub context: &'a DialogueContext,
    pub registry: &'a SourceRegistry,
    /// Gold plan, or an injected decision, for the oracle backend.
    pub gold: Option<&'a Plan>,
}

pub fn plan(
    input: PlanningInput<'_>,
    config: &PlannerConfig,
    providers: &Providers,
    templates: &PromptTemplates,
) -> Result<PlanOutcome, PlannerError> {
    config.validate()?;
    let outcome: Result<std::convert::Infallible, (PlannerError, Option<String>, Vec<String>)> = match config.backend {
        PlannerBackend::AlwaysNull => return Ok(PlanOutcome::clean(Plan::null())),
        PlannerBackend::AlwaysAll => {
            let order = input.registry.topological_order().expect("registries are acyclic");
            return Ok(PlanOutcome::clean(Plan::new(order).expect("registry names are unique")));
        }
        PlannerBackend::Oracle => {
            let gold = input.gold.ok_or(PlannerError::MissingGold)?;
            match validate_plan(gold, input.registry) {
                Ok(()) => return Ok(PlanOutcome::clean(gold.clone())),
                Err(v) => Err((PlannerError::Invalid(v), None, Vec::new())),
            }
        }
        PlannerBackend::LlmZeroShot | PlannerBackend::LlmIcl => {
            let req = build_planning_prompt(input.context, input.registry, config, templates)?;
            let raw = providers.chat()?.chat(&req)?;
            match parse_plan(&raw, input.registry) {
                Err(e) => Err((PlannerError::Parse(e), Some(raw), Vec::new())),
                Ok(parsed) => match validate_plan(&parsed.plan, input.registry) {
                    Ok(()) => {
                        return Ok(PlanOutcome { plan: parsed.plan, raw: Some(raw), dropped: parsed.dropped, warning: None })
                    }
                    Err(v) => Err((PlannerError::Invalid(v), Some(raw), parsed.dropped)),
                },
            }
        }
    };
    let Err((error, raw, dropped)) = outcome;
    match config.fallback {
        Fallback::Error => Err(error),
        Fallback::Null => {
            log::warn!("planner fallback to NULL: {error}");
            Ok(PlanOutcome { plan: Plan::null(), raw, dropped, warning: Some(error.to_string()) })
        }
    }
}
