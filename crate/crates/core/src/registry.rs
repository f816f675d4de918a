//! Knowledge sources, evidence, and dialogue context.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokens;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("invalid source name {name:?}: {reason}")]
    InvalidSourceName { name: String, reason: &'static str },
    #[error("source {0} is declared twice")]
    DuplicateSource(String),
    #[error("source {source_name} depends on unknown source {dependency}")]
    UnknownDependency { source_name: String, dependency: String },
    #[error("dependency cycle through {0}")]
    Cycle(String),
    #[error("evidence id {0:?} is used more than once")]
    DuplicateEvidence(String),
    #[error("evidence {id:?} has empty text")]
    EmptyEvidence { id: String },
    #[error("evidence id must be non-empty")]
    EmptyEvidenceId,
    #[error("dialogue context is empty")]
    EmptyContext,
    #[error("last turn of the dialogue context must be a user turn")]
    LastTurnNotUser,
}

/// Name of a knowledge source, e.g. `PERSONA` or `USER-PER`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SourceId(String);

impl SourceId {
    pub fn new(name: impl Into<String>) -> Result<Self, RegistryError> {
        let name = name.into();
        let reason = if name.is_empty() {
            Some("empty")
        } else if name.chars().any(|c| c.is_whitespace() || c == ',') {
            Some("contains whitespace or a comma")
        } else if name.chars().any(char::is_lowercase) {
            Some("must be uppercase")
        } else if tokens::is_reserved(&name) {
            Some("reserved token")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(RegistryError::InvalidSourceName { name, reason }),
            None => Ok(SourceId(name)),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for SourceId {
    type Error = RegistryError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        SourceId::new(value)
    }
}

impl From<SourceId> for String {
    fn from(value: SourceId) -> Self {
        value.0
    }
}

impl std::borrow::Borrow<str> for SourceId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Turn { role: Role::User, text: text.into() }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Turn { role: Role::System, text: text.into() }
    }
}

/// Ordered turns of the current conversation, ending with a user turn.
///
/// Roles need not alternate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Turn>", into = "Vec<Turn>")]
pub struct DialogueContext {
    turns: Vec<Turn>,
}

impl DialogueContext {
    pub fn new(turns: Vec<Turn>) -> Result<Self, RegistryError> {
        match turns.last() {
            None => Err(RegistryError::EmptyContext),
            Some(t) if t.role != Role::User => Err(RegistryError::LastTurnNotUser),
            Some(_) => Ok(DialogueContext { turns }),
        }
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    /// Newline-joined turn texts, used as the retrieval query.
    pub fn query_text(&self) -> String {
        self.turns.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join("\n")
    }

    /// A new context with `reply` and then `next_user` appended.
    pub fn extended(&self, reply: &str, next_user: &str) -> DialogueContext {
        let mut turns = self.turns.clone();
        turns.push(Turn::system(reply));
        turns.push(Turn::user(next_user));
        DialogueContext { turns }
    }
}

impl TryFrom<Vec<Turn>> for DialogueContext {
    type Error = RegistryError;
    fn try_from(value: Vec<Turn>) -> Result<Self, Self::Error> {
        DialogueContext::new(value)
    }
}

impl From<DialogueContext> for Vec<Turn> {
    fn from(value: DialogueContext) -> Self {
        value.turns
    }
}

/// One piece of knowledge inside a source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub id: String,
    pub source: SourceId,
    pub text: String,
    /// Ids of evidence in prerequisite sources this item is attached to
    /// (e.g. the persona a document sits behind). Used by hard filtering.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<String>,
}

impl Evidence {
    pub fn new(id: impl Into<String>, source: SourceId, text: impl Into<String>) -> Self {
        Evidence { id: id.into(), source, text: text.into(), links: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SourceEntry {
    pub description: Option<String>,
    pub depends_on: BTreeSet<SourceId>,
    pub docs: Vec<Evidence>,
}

/// The set of knowledge sources available for one sample, with their
/// declared dependencies.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SourceRegistry {
    sources: BTreeMap<SourceId, SourceEntry>,
    evidence_index: HashMap<String, (SourceId, usize)>,
}

impl SourceRegistry {
    /// Validates acyclicity, dependency targets, and evidence-id uniqueness.
    ///
    /// Each document's `source` field is overwritten with the owning source.
    pub fn new(sources: BTreeMap<SourceId, SourceEntry>) -> Result<Self, RegistryError> {
        let mut evidence_index = HashMap::new();
        let mut sources = sources;
        for (id, entry) in sources.iter_mut() {
            for (pos, doc) in entry.docs.iter_mut().enumerate() {
                if doc.id.is_empty() {
                    return Err(RegistryError::EmptyEvidenceId);
                }
                if doc.text.trim().is_empty() {
                    return Err(RegistryError::EmptyEvidence { id: doc.id.clone() });
                }
                doc.source = id.clone();
                if evidence_index.insert(doc.id.clone(), (id.clone(), pos)).is_some() {
                    return Err(RegistryError::DuplicateEvidence(doc.id.clone()));
                }
            }
        }
        for (id, entry) in &sources {
            for dep in &entry.depends_on {
                if !sources.contains_key(dep) {
                    return Err(RegistryError::UnknownDependency {
                        source_name: id.to_string(),
                        dependency: dep.to_string(),
                    });
                }
            }
        }
        let registry = SourceRegistry { sources, evidence_index };
        registry.topological_order()?;
        Ok(registry)
    }

    pub fn builder() -> RegistryBuilder {
        RegistryBuilder::default()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn contains(&self, source: &SourceId) -> bool {
        self.sources.contains_key(source)
    }

    pub fn source_ids(&self) -> impl Iterator<Item = &SourceId> {
        self.sources.keys()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&SourceId, &SourceEntry)> {
        self.sources.iter()
    }

    pub fn entry(&self, source: &SourceId) -> Option<&SourceEntry> {
        self.sources.get(source)
    }

    /// Looks up a source by its textual name.
    pub fn lookup(&self, name: &str) -> Option<&SourceId> {
        self.sources.get_key_value(name).map(|(k, _)| k)
    }

    pub fn docs(&self, source: &SourceId) -> &[Evidence] {
        self.sources.get(source).map(|e| e.docs.as_slice()).unwrap_or(&[])
    }

    pub fn depends_on(&self, source: &SourceId) -> impl Iterator<Item = &SourceId> {
        self.sources.get(source).into_iter().flat_map(|e| e.depends_on.iter())
    }

    pub fn evidence(&self, id: &str) -> Option<&Evidence> {
        let (source, pos) = self.evidence_index.get(id)?;
        self.sources.get(source).and_then(|e| e.docs.get(*pos))
    }

    /// Every source in a dependency-respecting order; ties are broken by name.
    pub fn topological_order(&self) -> Result<Vec<SourceId>, RegistryError> {
        let mut remaining: BTreeMap<&SourceId, usize> =
            self.sources.iter().map(|(id, e)| (id, e.depends_on.len())).collect();
        let mut order = Vec::with_capacity(self.sources.len());
        while !remaining.is_empty() {
            let next = remaining.iter().find(|(_, pending)| **pending == 0).map(|(id, _)| (*id).clone());
            let Some(next) = next else {
                let stuck = remaining.keys().next().map(|s| s.to_string()).unwrap_or_default();
                return Err(RegistryError::Cycle(stuck));
            };
            remaining.remove(&next);
            for (id, entry) in &self.sources {
                if entry.depends_on.contains(&next) {
                    if let Some(p) = remaining.get_mut(id) {
                        *p -= 1;
                    }
                }
            }
            order.push(next);
        }
        Ok(order)
    }
}

/// Incremental construction helper, mostly for tests and examples.
#[derive(Debug, Default)]
pub struct RegistryBuilder {
    sources: BTreeMap<SourceId, SourceEntry>,
    error: Option<RegistryError>,
}

impl RegistryBuilder {
    pub fn source(mut self, name: &str, depends_on: &[&str], docs: &[(&str, &str)]) -> Self {
        if self.error.is_some() {
            return self;
        }
        let built = (|| {
            let id = SourceId::new(name)?;
            let deps = depends_on.iter().map(|d| SourceId::new(*d)).collect::<Result<_, _>>()?;
            let docs = docs.iter().map(|(i, t)| Evidence::new(*i, id.clone(), *t)).collect();
            Ok::<_, RegistryError>((id, SourceEntry { description: None, depends_on: deps, docs }))
        })();
        match built {
            Ok((id, entry)) => {
                if self.sources.insert(id.clone(), entry).is_some() {
                    self.error = Some(RegistryError::DuplicateSource(id.to_string()));
                }
            }
            Err(e) => self.error = Some(e),
        }
        self
    }

    /// Attaches a description to the most recently named source.
    pub fn describe(mut self, name: &str, description: &str) -> Self {
        if let Some(entry) = self.sources.get_mut(name) {
            entry.description = Some(description.to_string());
        }
        self
    }

    /// Links an evidence item to prerequisite evidence ids.
    pub fn link(mut self, evidence_id: &str, to: &[&str]) -> Self {
        for entry in self.sources.values_mut() {
            for doc in entry.docs.iter_mut().filter(|d| d.id == evidence_id) {
                doc.links = to.iter().map(|s| s.to_string()).collect();
            }
        }
        self
    }

    pub fn build(self) -> Result<SourceRegistry, RegistryError> {
        if let Some(e) = self.error {
            return Err(e);
        }
        SourceRegistry::new(self.sources)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_names_are_validated() {
        assert!(SourceId::new("PERSONA").is_ok());
        assert!(SourceId::new("USER-PER").is_ok());
        assert!(SourceId::new("").is_err());
        assert!(SourceId::new("NULL").is_err());
        assert!(SourceId::new("[EOS]").is_err());
        assert!(SourceId::new("two words").is_err());
        assert!(SourceId::new("persona").is_err());
    }

    #[test]
    fn registry_rejects_cycles() {
        let err = SourceRegistry::builder()
            .source("A", &["B"], &[])
            .source("B", &["A"], &[])
            .build()
            .unwrap_err();
        assert!(matches!(err, RegistryError::Cycle(_)));
    }

    #[test]
    fn registry_rejects_unknown_dependency_and_duplicate_ids() {
        let err = SourceRegistry::builder().source("A", &["B"], &[]).build().unwrap_err();
        assert!(matches!(err, RegistryError::UnknownDependency { .. }));
        let err = SourceRegistry::builder()
            .source("A", &[], &[("x", "one")])
            .source("B", &[], &[("x", "two")])
            .build()
            .unwrap_err();
        assert_eq!(err, RegistryError::DuplicateEvidence("x".into()));
    }

    #[test]
    fn topological_order_respects_dependencies() {
        let reg = SourceRegistry::builder()
            .source("DOCUMENTS", &["PERSONA"], &[("d1", "doc")])
            .source("PERSONA", &[], &[("p1", "persona")])
            .source("AAA", &["DOCUMENTS"], &[])
            .build()
            .unwrap();
        let order: Vec<_> = reg.topological_order().unwrap().into_iter().map(String::from).collect();
        assert_eq!(order, ["PERSONA", "DOCUMENTS", "AAA"]);
        assert_eq!(reg.evidence("d1").unwrap().source.as_str(), "DOCUMENTS");
    }

    #[test]
    fn context_must_end_with_user() {
        assert_eq!(DialogueContext::new(vec![]).unwrap_err(), RegistryError::EmptyContext);
        assert_eq!(
            DialogueContext::new(vec![Turn::user("hi"), Turn::system("yo")]).unwrap_err(),
            RegistryError::LastTurnNotUser
        );
        let ctx = DialogueContext::new(vec![Turn::user("a"), Turn::user("b")]).unwrap();
        assert_eq!(ctx.query_text(), "a\nb");
    }
}
