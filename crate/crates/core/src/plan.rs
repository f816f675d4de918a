//! Source plans: the ordered list of knowledge sources a turn needs.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{SourceId, SourceRegistry};
use crate::tokens::{NULL, SOURCE_END, SOURCE_START};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("source {0} appears twice in the plan")]
    Duplicate(String),
    #[error("no source token or NULL found in {raw:?}")]
    Unparseable { raw: String },
}

/// Ordered sources to consult. The empty plan is the `NULL` decision.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<SourceId>", into = "Vec<SourceId>")]
pub struct Plan(Vec<SourceId>);

impl Plan {
    pub fn null() -> Self {
        Plan(Vec::new())
    }

    pub fn new(sources: Vec<SourceId>) -> Result<Self, PlanError> {
        let mut seen = HashSet::new();
        for s in &sources {
            if !seen.insert(s) {
                return Err(PlanError::Duplicate(s.to_string()));
            }
        }
        Ok(Plan(sources))
    }

    pub fn is_null(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sources(&self) -> &[SourceId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, source: &SourceId) -> bool {
        self.0.contains(source)
    }

    pub fn position(&self, source: &SourceId) -> Option<usize> {
        self.0.iter().position(|s| s == source)
    }

    /// Order-insensitive signature such as `NULL` or `DOCUMENTS+PERSONA`.
    pub fn signature(&self) -> String {
        if self.0.is_empty() {
            return NULL.to_string();
        }
        let mut names: Vec<&str> = self.0.iter().map(SourceId::as_str).collect();
        names.sort_unstable();
        names.join("+")
    }
}

impl TryFrom<Vec<SourceId>> for Plan {
    type Error = PlanError;
    fn try_from(value: Vec<SourceId>) -> Result<Self, Self::Error> {
        Plan::new(value)
    }
}

impl From<Plan> for Vec<SourceId> {
    fn from(value: Plan) -> Self {
        value.0
    }
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_plan(self))
    }
}

/// Renders `[SOURCE] K_1 ... K_n [EOS]`, or `[SOURCE] NULL [EOS]` for the
/// empty plan.
pub fn serialize_plan(plan: &Plan) -> String {
    let mut out = String::from(SOURCE_START);
    if plan.is_null() {
        out.push(' ');
        out.push_str(NULL);
    }
    for s in plan.sources() {
        out.push(' ');
        out.push_str(s.as_str());
    }
    out.push(' ');
    out.push_str(SOURCE_END);
    out
}

/// Result of tolerant plan decoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPlan {
    pub plan: Plan,
    /// Tokens that did not name a registry source, in order of appearance.
    pub dropped: Vec<String>,
}

/// Decodes a plan from (possibly noisy) model output.
///
/// Looks between the first `[SOURCE]` and the following `[EOS]` when both are
/// present; otherwise the whole string is split on whitespace and commas.
/// `NULL` as the first token yields the empty plan. Repeated sources keep
/// their first position and unknown tokens are dropped.
pub fn parse_plan(text: &str, registry: &SourceRegistry) -> Result<ParsedPlan, PlanError> {
    let body = text
        .find(SOURCE_START)
        .and_then(|start| {
            let rest = &text[start + SOURCE_START.len()..];
            rest.find(SOURCE_END).map(|end| &rest[..end])
        })
        .unwrap_or(text);

    let raw_tokens: Vec<&str> =
        body.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).collect();

    let mut sources: Vec<SourceId> = Vec::new();
    let mut dropped = Vec::new();
    let mut saw_null = false;
    for (pos, raw) in raw_tokens.iter().enumerate() {
        let token = clean_token(raw);
        if token.eq_ignore_ascii_case(NULL) {
            if pos == 0 {
                saw_null = true;
                break;
            }
            dropped.push(raw.to_string());
            continue;
        }
        let found = registry.lookup(token).or_else(|| registry.lookup(&token.to_uppercase()));
        match found {
            Some(id) if !sources.contains(id) => sources.push(id.clone()),
            Some(_) => {}
            None => dropped.push(raw.to_string()),
        }
    }
    if saw_null {
        return Ok(ParsedPlan { plan: Plan::null(), dropped });
    }
    if sources.is_empty() {
        return Err(PlanError::Unparseable { raw: text.to_string() });
    }
    Ok(ParsedPlan { plan: Plan(sources), dropped })
}

fn clean_token(raw: &str) -> &str {
    raw.trim_matches(|c: char| !(c.is_alphanumeric() || c == '-' || c == '_'))
}

/// A dependency rule broken by a plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlanViolation {
    pub source: SourceId,
    /// The dependency that is missing or misordered, or `None` when `source`
    /// itself is not in the registry.
    pub dependency: Option<SourceId>,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    UnknownSource,
    MissingDependency,
    MisorderedDependency,
}

/// Checks that every planned source is known and that each of its
/// dependencies is planned before it.
pub fn validate_plan(plan: &Plan, registry: &SourceRegistry) -> Result<(), Vec<PlanViolation>> {
    let mut violations = Vec::new();
    for (pos, source) in plan.sources().iter().enumerate() {
        if !registry.contains(source) {
            violations.push(PlanViolation {
                source: source.clone(),
                dependency: None,
                kind: ViolationKind::UnknownSource,
            });
            continue;
        }
        for dep in registry.depends_on(source) {
            let kind = match plan.position(dep) {
                Some(p) if p < pos => continue,
                Some(_) => ViolationKind::MisorderedDependency,
                None => ViolationKind::MissingDependency,
            };
            violations.push(PlanViolation { source: source.clone(), dependency: Some(dep.clone()), kind });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Maps plan signatures to class labels, e.g. `DOCUMENTS+PERSONA → BOTH`.
///
/// Unmapped signatures are their own class.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassScheme {
    entries: Vec<(String, String)>,
}

impl ClassScheme {
    /// Signatures may be written in any order (`PERSONA+DOCUMENTS`).
    pub fn new<S: AsRef<str>, C: AsRef<str>>(entries: impl IntoIterator<Item = (S, C)>) -> Self {
        let entries = entries
            .into_iter()
            .map(|(s, c)| (normalize_signature(s.as_ref()), c.as_ref().to_string()))
            .collect();
        ClassScheme { entries }
    }

    /// `NULL`, `PERSONA`, and `BOTH` for persona plus documents.
    pub fn kbp() -> Self {
        ClassScheme::new([("NULL", "NULL"), ("PERSONA", "PERSONA"), ("PERSONA+DOCUMENTS", "BOTH")])
    }

    /// `NULL`, `USER`, `BOT`, and `BOTH` for the two persona sides.
    pub fn dulemon() -> Self {
        ClassScheme::new([
            ("NULL", "NULL"),
            ("USER-PER", "USER"),
            ("BOT-PER", "BOT"),
            ("USER-PER+BOT-PER", "BOTH"),
        ])
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn classify(&self, plan: &Plan) -> String {
        let sig = plan.signature();
        self.entries
            .iter()
            .find(|(s, _)| *s == sig)
            .map(|(_, c)| c.clone())
            .unwrap_or(sig)
    }

    /// Class labels in declaration order, without repeats.
    pub fn classes(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (_, c) in &self.entries {
            if !out.contains(c) {
                out.push(c.clone());
            }
        }
        out
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Builds a scheme from `signature = class` pairs of a config table.
    pub fn from_map(map: &BTreeMap<String, String>) -> Self {
        ClassScheme::new(map.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }
}

fn normalize_signature(sig: &str) -> String {
    let mut parts: Vec<&str> = sig.split('+').map(str::trim).filter(|p| !p.is_empty()).collect();
    if parts.is_empty() {
        return NULL.to_string();
    }
    parts.sort_unstable();
    parts.join("+")
}
