//! Versioned prompt templates shared by the planner, the LLM relevance
//! scorer, and the reader.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::registry::{DialogueContext, Role};

const DEFAULT_TEMPLATES: &str = include_str!("../templates/prompts_v1.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template section {0:?} is missing")]
    MissingSection(&'static str),
    #[error("template section {section:?} lacks placeholder {{{placeholder}}}")]
    MissingPlaceholder { section: &'static str, placeholder: &'static str },
    #[error("text before the first section: {0:?}")]
    StrayText(String),
    #[error("cannot read template file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub version: String,
    pub user_prefix: String,
    pub system_prefix: String,
    pub planning: String,
    pub demonstration: String,
    pub relevance: String,
    pub generation: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates::parse(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}

const REQUIRED: [(&str, &[&str]); 7] = [
    ("version", &[]),
    ("user_prefix", &[]),
    ("system_prefix", &[]),
    ("planning", &["sources", "context", "demonstrations"]),
    ("demonstration", &["context", "plan"]),
    ("relevance", &["context", "evidence"]),
    ("generation", &[]),
];

impl PromptTemplates {
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut sections: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in text.lines() {
            let trimmed = line.trim();
            if let Some(name) = trimmed.strip_prefix("=== ").and_then(|l| l.strip_suffix(" ===")) {
                current = Some(name.trim().to_string());
                sections.entry(name.trim().to_string()).or_default();
                continue;
            }
            match &current {
                Some(name) => sections.get_mut(name).expect("section exists").push(line),
                None if trimmed.is_empty() || trimmed.starts_with('#') => {}
                None => return Err(TemplateError::StrayText(line.to_string())),
            }
        }
        let mut get = |name: &'static str, placeholders: &[&'static str]| {
            let lines = sections.remove(name).ok_or(TemplateError::MissingSection(name))?;
            let body = lines.join("\n").trim_matches('\n').to_string();
            for p in placeholders {
                if !body.contains(&format!("{{{p}}}")) {
                    return Err(TemplateError::MissingPlaceholder { section: name, placeholder: p });
                }
            }
            Ok(body)
        };
        let mut values = Vec::new();
        for (name, placeholders) in REQUIRED {
            values.push(get(name, placeholders)?);
        }
        let mut it = values.into_iter();
        let mut next = || it.next().expect("all sections collected");
        Ok(PromptTemplates {
            version: next().trim().to_string(),
            user_prefix: next().trim().to_string(),
            system_prefix: next().trim().to_string(),
            planning: next(),
            demonstration: next(),
            relevance: next(),
            generation: next(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|e| TemplateError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    /// `User: ...` / `System: ...` lines, each terminated by a newline.
    pub fn render_context(&self, context: &DialogueContext) -> String {
        let mut out = String::new();
        for turn in context.turns() {
            let prefix = match turn.role {
                Role::User => &self.user_prefix,
                Role::System => &self.system_prefix,
            };
            out.push_str(prefix);
            out.push(' ');
            out.push_str(&turn.text);
            out.push('\n');
        }
        out
    }
}

/// Substitutes `{key}` placeholders in one pass, so substituted values are
/// never re-scanned.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let key = &after[..close];
            values.iter().find(|(k, _)| *k == key).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
