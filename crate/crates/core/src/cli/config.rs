//! Run configuration: a TOML file, then command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sample;
use crate::evalkit::{RoleMap, DEFAULT_THRESHOLD};
use crate::labels::LabelConfig;
use crate::plan::ClassScheme;
use crate::planner::{Fallback, PlannerBackend};
use crate::providers::{
    ConstantNli, GenParams, HashEmbedder, HttpChat, HttpEmbedder, HttpNli, OverlapNli, PrefixChat, ProviderConfig,
    Providers, ScriptedChat,
};
use crate::refine::RefinementConfig;
use crate::retrieval::{RetrievalConfig, ScorerKind};
use crate::templates::PromptTemplates;
use crate::text::TokenizerMode;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("config: {0}")]
pub struct ConfigError(pub String);

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ChatSpec {
    Http(ProviderConfig),
    /// JSONL of `{"key"|"prompt", "reply"}`.
    Script {
        path: PathBuf,
        #[serde(default)]
        fallback: Option<String>,
    },
    /// Answers generation prompts with the reference response of the sample
    /// whose context they start with.
    References {
        #[serde(default)]
        fallback: Option<String>,
    },
    Constant { reply: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbedderSpec {
    Http(ProviderConfig),
    Hash {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_dim() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NliSpec {
    Http(ProviderConfig),
    Constant { value: f64 },
    Overlap {
        #[serde(default)]
        tokenizer: TokenizerMode,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    pub backend: PlannerBackend,
    pub fallback: Fallback,
    /// Corpus-format file whose contexts and gold plans become in-context
    /// demonstrations.
    pub demonstrations: Option<PathBuf>,
    /// `plans.jsonl` whose plans the oracle backend replays instead of gold.
    pub plans_file: Option<PathBuf>,
    pub params: GenParams,
}

impl Default for PlannerSection {
    fn default() -> Self {
        PlannerSection {
            backend: PlannerBackend::LlmZeroShot,
            fallback: Fallback::Null,
            demonstrations: None,
            plans_file: None,
            params: GenParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grounding {
    /// Gold evidence of each sample.
    #[default]
    Gold,
    /// Evidence actually retrieved for the response.
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub recall_k: usize,
    pub threshold: f64,
    /// `kbp`, `dulemon`, or an inline `signature = class` table.
    pub scheme: SchemeSpec,
    pub grounding: Grounding,
    /// Name recall columns `CLASS-SOURCE` for multi-source plans.
    pub roles_by_class: bool,
    pub roles: RoleMap,
    pub tokenizer: TokenizerMode,
    /// Refine responses before scoring them.
    pub refine: bool,
    /// Read upstream artifacts from the output directory instead of
    /// recomputing them.
    pub reuse_artifacts: bool,
    pub label: Option<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            recall_k: 1,
            threshold: DEFAULT_THRESHOLD,
            scheme: SchemeSpec::Named("kbp".into()),
            grounding: Grounding::Gold,
            roles_by_class: true,
            roles: RoleMap::default(),
            tokenizer: TokenizerMode::CharCjk,
            refine: false,
            reuse_artifacts: false,
            label: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemeSpec {
    Named(String),
    Table(BTreeMap<String, String>),
}

impl SchemeSpec {
    pub fn build(&self) -> Result<ClassScheme, ConfigError> {
        match self {
            SchemeSpec::Named(n) if n == "kbp" => Ok(ClassScheme::kbp()),
            SchemeSpec::Named(n) if n == "dulemon" => Ok(ClassScheme::dulemon()),
            SchemeSpec::Named(n) => Err(err(format!("unknown class scheme {n:?} (kbp, dulemon, or a table)"))),
            SchemeSpec::Table(t) => Ok(ClassScheme::from_map(t)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelSection {
    pub scorer: ScorerKind,
    /// Defaults to `labels.jsonl` in the output directory.
    pub cache: Option<PathBuf>,
    pub timestamp: Option<DateTime<Utc>>,
    /// Also write `records.jsonl` training records from the cache.
    pub emit_records: bool,
}

impl Default for LabelSection {
    fn default() -> Self {
        LabelSection { scorer: ScorerKind::Hard, cache: None, timestamp: None, emit_records: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub parallelism: usize,
    pub templates: Option<PathBuf>,
    pub generation: GenParams,
    pub chat: Option<ChatSpec>,
    pub embedder: Option<EmbedderSpec>,
    pub nli: Option<NliSpec>,
    pub planner: PlannerSection,
    pub retrieval: RetrievalConfig,
    pub refine: RefinementConfig,
    pub eval: EvalSection,
    pub labels: LabelSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: PathBuf::from("corpus.jsonl"),
            out_dir: PathBuf::from("out"),
            seed: 0,
            parallelism: 1,
            templates: None,
            generation: GenParams::default(),
            chat: None,
            embedder: None,
            nli: None,
            planner: PlannerSection::default(),
            retrieval: RetrievalConfig::default(),
            refine: RefinementConfig::default(),
            eval: EvalSection::default(),
            labels: LabelSection::default(),
        }
    }
}

/// Flag values that win over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub corpus: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub planner: Option<PlannerBackend>,
    pub scorer: Option<ScorerKind>,
    pub fallback: Option<Fallback>,
    pub top_n: Option<usize>,
    pub alpha: Option<usize>,
    pub steps: Option<usize>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
    pub reuse_artifacts: bool,
    pub refine: bool,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| err(e.to_string()))
    }

    /// Parses a file; relative paths inside are taken relative to it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| err(format!("{}: {}", path.display(), e.0)))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.out_dir);
        for p in [&mut self.templates, &mut self.planner.demonstrations, &mut self.planner.plans_file, &mut self.labels.cache]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        if let Some(ChatSpec::Script { path, .. }) = &mut self.chat {
            fix(path);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.corpus {
            self.corpus = v.clone();
        }
        if let Some(v) = &o.out_dir {
            self.out_dir = v.clone();
        }
        if let Some(v) = o.planner {
            self.planner.backend = v;
        }
        if let Some(v) = o.scorer {
            self.retrieval.scorer = v;
        }
        if let Some(v) = o.fallback {
            self.planner.fallback = v;
        }
        if let Some(v) = o.top_n {
            self.retrieval.top_n = v;
        }
        if let Some(v) = o.alpha {
            self.refine.alpha = v;
        }
        if let Some(v) = o.steps {
            self.refine.steps = v;
        }
        if let Some(v) = o.parallelism {
            self.parallelism = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        self.eval.reuse_artifacts |= o.reuse_artifacts;
        self.eval.refine |= o.refine;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.corpus.is_file() {
            return Err(err(format!("corpus {} does not exist", self.corpus.display())));
        }
        for p in [&self.templates, &self.planner.demonstrations, &self.planner.plans_file].into_iter().flatten() {
            if !p.is_file() {
                return Err(err(format!("{} does not exist", p.display())));
            }
        }
        if let Some(ChatSpec::Script { path, .. }) = &self.chat {
            if !path.is_file() {
                return Err(err(format!("chat script {} does not exist", path.display())));
            }
        }
        if self.parallelism == 0 {
            return Err(err("parallelism must be at least 1"));
        }
        if self.retrieval.top_n == 0 {
            return Err(err("top_n must be at least 1"));
        }
        if self.eval.recall_k == 0 {
            return Err(err("recall_k must be at least 1"));
        }
        if !(self.eval.threshold > 0.0 && self.eval.threshold < 1.0) {
            return Err(err(format!("threshold must lie in (0, 1), got {}", self.eval.threshold)));
        }
        self.refine.validate().map_err(|e| err(e.to_string()))?;
        self.generation.validate().map_err(|e| err(e.to_string()))?;
        self.planner.params.validate().map_err(|e| err(e.to_string()))?;
        self.retrieval.params.validate().map_err(|e| err(e.to_string()))?;
        if self.planner.backend == PlannerBackend::LlmIcl && self.planner.demonstrations.is_none() {
            return Err(err("planner backend llm-icl needs a demonstrations file"));
        }
        self.eval.scheme.build()?;
        let http = [
            self.chat.as_ref().and_then(ChatSpec::http),
            self.embedder.as_ref().and_then(EmbedderSpec::http),
            self.nli.as_ref().and_then(NliSpec::http),
        ];
        for spec in http.into_iter().flatten() {
            spec.validate().map_err(err)?;
        }
        if let Some(NliSpec::Constant { value }) = &self.nli {
            if !(0.0..=1.0).contains(value) {
                return Err(err(format!("constant nli value {value} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn templates(&self) -> Result<PromptTemplates, ConfigError> {
        match &self.templates {
            Some(p) => PromptTemplates::load(p).map_err(|e| err(e.to_string())),
            None => Ok(PromptTemplates::default()),
        }
    }

    pub fn scheme(&self) -> Result<ClassScheme, ConfigError> {
        self.eval.scheme.build()
    }

    pub fn label_config(&self) -> LabelConfig {
        LabelConfig {
            scorer: self.labels.scorer,
            params: self.retrieval.params,
            timestamp: self.labels.timestamp,
            ..LabelConfig::default()
        }
    }

    pub fn label_cache_path(&self) -> PathBuf {
        self.labels.cache.clone().unwrap_or_else(|| self.out_dir.join("labels.jsonl"))
    }

    /// Instantiates the configured providers. `samples` feeds the
    /// reference-answering chat mock.
    pub fn providers(&self, samples: &[Sample], templates: &PromptTemplates) -> Result<Providers, ConfigError> {
        let mut p = Providers::default();
        let http = |e: crate::providers::ProviderError| err(e.to_string());
        match &self.chat {
            None => {}
            Some(ChatSpec::Http(c)) => p = p.with_chat(HttpChat::new(c.clone()).map_err(http)?),
            Some(ChatSpec::Script { path, fallback }) => {
                let mut chat = ScriptedChat::from_script_file(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
                if let Some(f) = fallback {
                    chat = chat.lenient(f.clone());
                }
                p = p.with_chat(chat);
            }
            Some(ChatSpec::References { fallback }) => {
                let mut chat = PrefixChat::new();
                for s in samples {
                    chat = chat.with(templates.render_context(&s.context), s.reference_response.clone());
                }
                if let Some(f) = fallback {
                    chat = chat.lenient(f.clone());
                }
                p = p.with_chat(chat);
            }
            Some(ChatSpec::Constant { reply }) => {
                let reply = reply.clone();
                p = p.with_chat(crate::providers::FnChat(move |_: &crate::providers::ChatRequest| Ok(reply.clone())));
            }
        }
        match &self.embedder {
            None => {}
            Some(EmbedderSpec::Http(c)) => p = p.with_embedder(HttpEmbedder::new(c.clone()).map_err(http)?),
            Some(EmbedderSpec::Hash { dim, seed }) => {
                if *dim == 0 {
                    return Err(err("hash embedder dim must be at least 1"));
                }
                p = p.with_embedder(HashEmbedder::new(*dim, *seed));
            }
        }
        match &self.nli {
            None => {}
            Some(NliSpec::Http(c)) => p = p.with_nli(HttpNli::new(c.clone()).map_err(http)?),
            Some(NliSpec::Constant { value }) => p = p.with_nli(ConstantNli(*value)),
            Some(NliSpec::Overlap { tokenizer }) => p = p.with_nli(OverlapNli { mode: *tokenizer }),
        }
        Ok(p)
    }
}

impl ChatSpec {
    fn http(&self) -> Option<&ProviderConfig> {
        match self {
            ChatSpec::Http(c) => Some(c),
            _ => None,
        }
    }
}

impl EmbedderSpec {
    fn http(&self) -> Option<&ProviderConfig> {
        match self {
            EmbedderSpec::Http(c) => Some(c),
            _ => None,
        }
    }
}

impl NliSpec {
    fn http(&self) -> Option<&ProviderConfig> {
        match self {
            NliSpec::Http(c) => Some(c),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOML: &str = r#"
corpus = "data.jsonl"
out_dir = "out"
seed = 7
parallelism = 2

[chat]
kind = "http"
endpoint = "http://localhost:9000/v1"
model = "glm"
auth_env = "CHAT_TOKEN"

[embedder]
kind = "hash"
dim = 64

[nli]
kind = "constant"
value = 1.0

[planner]
backend = "oracle"
fallback = "error"

[retrieval]
scorer = "dense"
top_n = 2

[refine]
alpha = 2
steps = 3

[eval]
scheme = { "NULL" = "NULL", "A+B" = "BOTH" }
"#;

    #[test]
    fn parses_sections() {
        let c = RunConfig::parse(TOML).unwrap();
        assert_eq!(c.seed, 7);
        assert!(matches!(&c.chat, Some(ChatSpec::Http(p)) if p.model == "glm" && p.max_retries == 3));
        assert_eq!(c.embedder, Some(EmbedderSpec::Hash { dim: 64, seed: 0 }));
        assert_eq!(c.planner.backend, PlannerBackend::Oracle);
        assert_eq!(c.planner.fallback, Fallback::Error);
        assert_eq!((c.retrieval.scorer, c.retrieval.top_n), (ScorerKind::Dense, 2));
        assert_eq!((c.refine.alpha, c.refine.steps, c.refine.skip_on_null), (2, 3, true));
        assert_eq!(c.scheme().unwrap().classify(&crate::plan::Plan::null()), "NULL");
    }

    #[test]
    fn flags_win_and_paths_rebase() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, TOML).unwrap();
        let mut c = RunConfig::load(&path).unwrap();
        assert_eq!(c.corpus, dir.path().join("data.jsonl"));
        c.apply(&Overrides { top_n: Some(3), planner: Some(PlannerBackend::AlwaysNull), ..Overrides::default() });
        assert_eq!(c.retrieval.top_n, 3);
        assert_eq!(c.planner.backend, PlannerBackend::AlwaysNull);
        assert!(c.validate().unwrap_err().0.contains("does not exist"));
        std::fs::write(dir.path().join("data.jsonl"), "").unwrap();
        c.validate().unwrap();
        c.parallelism = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_unknown_fields_and_bad_scheme() {
        assert!(RunConfig::parse("[retrieval]\nscorer = \"magic\"").is_err());
        let c = RunConfig::parse("[eval]\nscheme = \"nope\"").unwrap();
        assert!(c.scheme().is_err());
    }
}
