//! Declarative run configuration: a single TOML document with explicit
//! seeds. Unknown keys are errors.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::KeyStyle;
use crate::error::Error;
use crate::eval::DEFAULT_KS;
use crate::retrieval::{RetrieverKind, SparseParams, VectorParams, DEFAULT_EMBEDDING_DIM, DEFAULT_RRF_K};
use crate::temporal::WindowPolicy;
use crate::Result;

/// Environment variables holding endpoint URLs and credentials. URLs may
/// also come from `[endpoints]` (environment wins); tokens come from the
/// environment only and are never persisted.
pub const ENV_EMBED_URL: &str = "LINKREC_EMBED_URL";
pub const ENV_EMBED_TOKEN: &str = "LINKREC_EMBED_TOKEN";
pub const ENV_CHAT_URL: &str = "LINKREC_CHAT_URL";
pub const ENV_CHAT_MODEL: &str = "LINKREC_CHAT_MODEL";
pub const ENV_CHAT_TOKEN: &str = "LINKREC_CHAT_TOKEN";
pub const ENV_SCORE_URL: &str = "LINKREC_SCORE_URL";
pub const ENV_SCORE_TOKEN: &str = "LINKREC_SCORE_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Master seed; every seeded component derives from it. Required, so no
    /// run ever falls back to wall-clock entropy.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker-pool size for per-issue work; 0 means one worker per
    /// processing unit.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
}

fn default_ks() -> Vec<usize> {
    DEFAULT_KS.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub id: String,
    pub issues: PathBuf,
    pub commits: PathBuf,
    pub style: KeyStyle,
    /// Jira project keys, e.g. ["KAFKA"]; unused for github style.
    #[serde(default)]
    pub keys: Vec<String>,
}

/// Statistics scope for a retriever: per-pool (default) computes corpus
/// statistics over each issue's candidate pool; global computes them over
/// the whole project and restricts scoring to the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexScope {
    #[default]
    Pool,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieverEntry {
    pub name: RetrieverKind,
    #[serde(default = "default_retrieve_k")]
    pub k: usize,
    #[serde(default)]
    pub scope: IndexScope,
}

fn default_retrieve_k() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSection {
    pub sparse: SparseParams,
    pub vector: VectorParams,
    pub rrf_k: u32,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        RetrievalSection {
            sparse: SparseParams::default(),
            vector: VectorParams::default(),
            rrf_k: DEFAULT_RRF_K,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingProviderKind {
    /// Built-in deterministic feature-hashing embedder.
    #[default]
    Hashing,
    /// HTTP embeddings endpoint.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingSection {
    pub provider: EmbeddingProviderKind,
    pub dim: usize,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection {
            provider: EmbeddingProviderKind::Hashing,
            dim: DEFAULT_EMBEDDING_DIM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RerankerKind {
    /// Raw fused-retrieval order; the reranking baseline.
    Identity,
    Forest,
    Frlink,
    Llm,
    External,
}

impl RerankerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RerankerKind::Identity => "identity",
            RerankerKind::Forest => "forest",
            RerankerKind::Frlink => "frlink",
            RerankerKind::Llm => "llm",
            RerankerKind::External => "external",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankerEntry {
    pub name: RerankerKind,
    /// Candidates handed to the reranker.
    #[serde(default = "default_rerank_k")]
    pub k: usize,
    /// Per-candidate message budget in the LLM prompt.
    #[serde(default = "default_char_budget")]
    pub message_char_budget: usize,
}

fn default_rerank_k() -> usize {
    crate::rerank::RERANK_CANDIDATES
}

fn default_char_budget() -> usize {
    crate::rerank::DEFAULT_MESSAGE_CHAR_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub ratio: f64,
    pub sample_size: usize,
    pub sample_repeats: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            ratio: 0.2,
            sample_size: 1000,
            sample_repeats: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoverageSection {
    /// Policies to sweep; defaults to the run's window policy alone.
    pub policies: Vec<WindowPolicy>,
}

/// Endpoint URLs (tokens always come from the environment).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointsSection {
    pub embed_url: Option<String>,
    pub chat_url: Option<String>,
    pub chat_model: Option<String>,
    pub score_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub projects: Vec<ProjectConfig>,
    #[serde(default = "WindowPolicy::hybrid_default")]
    pub window: WindowPolicy,
    #[serde(default)]
    pub coverage: CoverageSection,
    #[serde(default = "default_retrievers")]
    pub retrievers: Vec<RetrieverEntry>,
    #[serde(default)]
    pub retrieval: RetrievalSection,
    #[serde(default)]
    pub embedding: EmbeddingSection,
    #[serde(default)]
    pub rerankers: Vec<RerankerEntry>,
    #[serde(default)]
    pub forest: crate::rerank::ForestParams,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub endpoints: EndpointsSection,
}

fn default_retrievers() -> Vec<RetrieverEntry> {
    vec![RetrieverEntry {
        name: RetrieverKind::Rrf,
        k: 50,
        scope: IndexScope::Pool,
    }]
}

impl RunConfig {
    /// Parse a TOML config file; unknown keys are errors.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Check everything that can be checked before any stage runs:
    /// referenced files exist, key patterns compile, scopes are valid, and
    /// any configured reranker has a fused retriever to draw candidates
    /// from.
    pub fn validate(&self) -> Result<()> {
        if self.projects.is_empty() {
            return Err(Error::Config("no projects configured".into()));
        }
        let mut ids = BTreeSet::new();
        for project in &self.projects {
            if !ids.insert(&project.id) {
                return Err(Error::Config(format!("duplicate project id {:?}", project.id)));
            }
            for (label, path) in [("issues", &project.issues), ("commits", &project.commits)] {
                if !path.is_file() {
                    return Err(Error::Config(format!(
                        "project {:?}: {label} file {} does not exist",
                        project.id,
                        path.display()
                    )));
                }
            }
            crate::corpus::KeyPattern::new(project.style, &project.keys)?;
        }

        self.window.validate()?;
        for policy in &self.coverage.policies {
            policy.validate()?;
        }

        if self.run.ks.is_empty() || self.run.ks.contains(&0) {
            return Err(Error::Config("run.ks must be non-empty positive cutoffs".into()));
        }
        if self.retrievers.is_empty() {
            return Err(Error::Config("no retrievers configured".into()));
        }
        let mut names = BTreeSet::new();
        for retriever in &self.retrievers {
            if !names.insert(retriever.name.as_str()) {
                return Err(Error::Config(format!(
                    "retriever {:?} configured twice",
                    retriever.name.as_str()
                )));
            }
            if retriever.k == 0 {
                return Err(Error::Config("retriever k must be >= 1".into()));
            }
            if retriever.scope == IndexScope::Global
                && !matches!(
                    retriever.name,
                    RetrieverKind::Bm25 | RetrieverKind::Bm25l | RetrieverKind::Flat
                )
            {
                return Err(Error::Config(format!(
                    "retriever {:?}: global scope is only exact for bm25/bm25l/flat",
                    retriever.name.as_str()
                )));
            }
        }
        if !self.rerankers.is_empty()
            && !self.retrievers.iter().any(|r| r.name == RetrieverKind::Rrf)
        {
            return Err(Error::Config(
                "rerankers draw their candidates from the rrf retriever; add `name = \"rrf\"` to [[retrievers]]".into(),
            ));
        }
        let mut reranker_names = BTreeSet::new();
        for reranker in &self.rerankers {
            if !reranker_names.insert(reranker.name.as_str()) {
                return Err(Error::Config(format!(
                    "reranker {:?} configured twice",
                    reranker.name.as_str()
                )));
            }
            if reranker.k == 0 {
                return Err(Error::Config("reranker k must be >= 1".into()));
            }
        }
        if !(0.0..1.0).contains(&self.split.ratio) || self.split.ratio == 0.0 {
            return Err(Error::Config(format!(
                "split.ratio must be in (0, 1), got {}",
                self.split.ratio
            )));
        }
        if self.embedding.dim == 0 {
            return Err(Error::Config("embedding.dim must be >= 1".into()));
        }
        Ok(())
    }

    /// Content hash of the resolved configuration; identical configs map to
    /// identical artifact directories and, with identical inputs, identical
    /// outputs.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    /// First 16 hex chars of the fingerprint, used in artifact paths.
    pub fn fingerprint_short(&self) -> String {
        self.fingerprint()[..16].to_string()
    }

    /// Resolved URL for a service: environment first, then `[endpoints]`.
    pub fn endpoint_url(&self, env_var: &str, from_config: &Option<String>) -> Option<String> {
        std::env::var(env_var).ok().or_else(|| from_config.clone())
    }
}
