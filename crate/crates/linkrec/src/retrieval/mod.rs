//! Retrieval: tokenization, sparse and dense indexes over candidate pools,
//! and rank fusion.
//!
//! Indexes are build-once, read-many. The default scoring scope is
//! per-pool: corpus statistics are computed over each issue's candidate
//! pool. Global-corpus statistics are available through the pipeline's
//! `scope = "global"` retriever option (sparse and flat only).

mod embed;
mod fuse;
mod sparse;
mod token;
mod vector;

pub use embed::{
    dot, embed_documents, l2_norm, l2_normalize, EmbeddingProvider, HashingEmbedder,
    DEFAULT_EMBEDDING_DIM,
};
pub use fuse::{rrf_fuse, DEFAULT_RRF_K, DEFAULT_RRF_TOP_N};
pub use sparse::{build_sparse_index, sparse_search, sparse_search_within, SparseIndex, SparseParams, SparseVariant};
pub use token::{tokenize, TokenStream, STOPWORDS, STOPWORDS_VERSION};
pub use vector::{build_vector_index, flat_search_within, vector_search, VectorIndex, VectorKind, VectorParams};

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::Result;

/// One scored document in a ranked list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// An ordered retrieval/fusion/reranking result: entries sorted by score
/// descending, ties by ascending doc_id unless an operation defines its own
/// deterministic tie rule, doc_ids distinct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<ScoredDoc>,
    /// Name of the retriever, fuser, or reranker that produced the list.
    pub provenance: String,
}

impl RankedList {
    /// Sort scores descending (ties by ascending doc_id), drop duplicate
    /// doc_ids, and keep the top `k`.
    pub fn from_scores(
        query_id: &str,
        provenance: &str,
        mut scores: Vec<(String, f64)>,
        k: usize,
    ) -> Self {
        scores.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut seen = std::collections::HashSet::new();
        let entries = scores
            .into_iter()
            .filter(|(id, _)| seen.insert(id.clone()))
            .take(k)
            .map(|(doc_id, score)| ScoredDoc { doc_id, score })
            .collect();
        RankedList {
            query_id: query_id.to_string(),
            entries,
            provenance: provenance.to_string(),
        }
    }

    /// Wrap entries that already carry their final order (scores must be
    /// non-increasing); used by operations with bespoke tie rules.
    pub fn pre_ranked(query_id: &str, provenance: &str, entries: Vec<(String, f64)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].1 >= w[1].1));
        RankedList {
            query_id: query_id.to_string(),
            entries: entries
                .into_iter()
                .map(|(doc_id, score)| ScoredDoc { doc_id, score })
                .collect(),
            provenance: provenance.to_string(),
        }
    }

    pub fn empty(query_id: &str, provenance: &str) -> Self {
        RankedList {
            query_id: query_id.to_string(),
            entries: Vec::new(),
            provenance: provenance.to_string(),
        }
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    /// 1-based rank of a document, if present.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.doc_id == doc_id).map(|i| i + 1)
    }

    pub fn score_of(&self, doc_id: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.doc_id == doc_id).map(|e| e.score)
    }

    /// A copy truncated to the first `k` entries.
    pub fn truncated(&self, k: usize) -> RankedList {
        RankedList {
            query_id: self.query_id.clone(),
            entries: self.entries.iter().take(k).cloned().collect(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Which retriever to run for an issue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverKind {
    Bm25,
    Bm25l,
    Flat,
    Hnsw,
    Lsh,
    RpForest,
    /// Fusion of a sparse and a dense list (paper default: BM25 + flat).
    Rrf,
}

impl RetrieverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RetrieverKind::Bm25 => "bm25",
            RetrieverKind::Bm25l => "bm25l",
            RetrieverKind::Flat => "flat",
            RetrieverKind::Hnsw => "hnsw",
            RetrieverKind::Lsh => "lsh",
            RetrieverKind::RpForest => "rp_forest",
            RetrieverKind::Rrf => "rrf",
        }
    }

    pub fn needs_dense(self) -> bool {
        matches!(
            self,
            RetrieverKind::Flat
                | RetrieverKind::Hnsw
                | RetrieverKind::Lsh
                | RetrieverKind::RpForest
                | RetrieverKind::Rrf
        )
    }

    pub fn needs_sparse(self) -> bool {
        matches!(self, RetrieverKind::Bm25 | RetrieverKind::Bm25l | RetrieverKind::Rrf)
    }
}

/// Retriever configuration for [`retrieve_for_issue`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieverConfig {
    pub kind: RetrieverKind,
    /// Result list length (and per-side depth for RRF inputs).
    pub k: usize,
    pub sparse_params: SparseParams,
    pub vector_params: VectorParams,
    /// Sparse side of RRF fusion.
    pub rrf_sparse: SparseVariant,
    /// Dense side of RRF fusion.
    pub rrf_dense: VectorKind,
    pub rrf_k: u32,
}

impl RetrieverConfig {
    pub fn new(kind: RetrieverKind, k: usize) -> Self {
        RetrieverConfig {
            kind,
            k,
            sparse_params: SparseParams::default(),
            vector_params: VectorParams::default(),
            rrf_sparse: SparseVariant::Bm25,
            rrf_dense: VectorKind::Flat,
            rrf_k: DEFAULT_RRF_K,
        }
    }
}

/// Everything known about one issue's candidate pool at retrieval time:
/// documents in pool order and, when a dense retriever runs, the matching
/// unit vectors.
pub struct IssuePool<'a> {
    pub docs: &'a [Document],
    pub vectors: Option<&'a [(String, Vec<f32>)]>,
}

/// Run one retriever (or the RRF fusion of two) over an issue's candidate
/// pool. An empty pool yields an empty list with a warning; every returned
/// doc_id comes from the pool.
pub fn retrieve_for_issue(
    query_id: &str,
    query_text: &str,
    query_vector: Option<&[f32]>,
    pool: &IssuePool<'_>,
    config: &RetrieverConfig,
) -> Result<RankedList> {
    if pool.docs.is_empty() {
        log::warn!("issue {query_id}: empty candidate pool");
        return Ok(RankedList::empty(query_id, config.kind.as_str()));
    }

    let sparse_list = |variant: SparseVariant| -> Result<RankedList> {
        let index = build_sparse_index(pool.docs, variant, config.sparse_params)?;
        Ok(sparse_search(&index, &tokenize(query_text), config.k, query_id))
    };
    let dense_list = |kind: VectorKind| -> Result<RankedList> {
        let vectors = pool
            .vectors
            .ok_or_else(|| crate::Error::Config("dense retriever needs pool vectors".into()))?;
        let query_vector = query_vector
            .ok_or_else(|| crate::Error::Config("dense retriever needs a query vector".into()))?;
        let index = build_vector_index(vectors.to_vec(), kind, config.vector_params)?;
        vector_search(&index, query_vector, config.k, query_id)
    };

    match config.kind {
        RetrieverKind::Bm25 => sparse_list(SparseVariant::Bm25),
        RetrieverKind::Bm25l => sparse_list(SparseVariant::Bm25l),
        RetrieverKind::Flat => dense_list(VectorKind::Flat),
        RetrieverKind::Hnsw => dense_list(VectorKind::Hnsw),
        RetrieverKind::Lsh => dense_list(VectorKind::Lsh),
        RetrieverKind::RpForest => dense_list(VectorKind::RpForest),
        RetrieverKind::Rrf => {
            let sparse = sparse_list(config.rrf_sparse)?;
            let dense = dense_list(config.rrf_dense)?;
            rrf_fuse(&[sparse, dense], config.rrf_k, config.k)
        }
    }
}
