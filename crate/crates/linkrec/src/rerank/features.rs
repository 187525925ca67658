//! The fixed issue-commit feature schema: eight textual and eight metadata
//! features.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{scrub_identifiers, CommitRecord, IssueRecord, KeyPattern};
use crate::retrieval::tokenize;
use crate::temporal::WindowPolicy;

use super::tfidf::TfIdfSpace;

/// Bump when the feature list below changes; persisted models carry it and
/// refuse to score a different version.
pub const FEATURE_SCHEMA_VERSION: u32 = 1;

pub const FEATURE_COUNT: usize = 16;

/// Feature names, in schema order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    // textual
    "tfidf_cosine_message",
    "tfidf_cosine_code",
    "token_jaccard",
    "shared_token_count",
    "shared_rare_token_count",
    "query_len",
    "doc_len",
    "bm25_score",
    // metadata
    "days_creation_to_commit",
    "days_commit_to_closure",
    "within_closure_buffer",
    "author_is_reporter",
    "author_is_assignee",
    "changed_files",
    "changed_methods",
    "rrf_score",
];

/// One issue-commit pair's features, optionally labeled for training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: [f64; FEATURE_COUNT],
    /// `true` = positive (linked), `false` = negative.
    pub label: Option<bool>,
}

impl FeatureVector {
    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Pool-level context needed to featurize a pair: the pool's tf-idf space,
/// the window policy, the project key pattern, and the issue's retrieval
/// scores per document.
pub struct FeatureContext<'a> {
    pub space: &'a TfIdfSpace,
    pub policy: &'a WindowPolicy,
    pub pattern: &'a KeyPattern,
    /// Scrubbed issue query text.
    pub query_text: &'a str,
    /// BM25 scores from the retrieval stage, by doc_id (0 when absent).
    pub bm25_scores: &'a HashMap<String, f64>,
    /// RRF scores from the fusion stage, by doc_id (0 when absent).
    pub rrf_scores: &'a HashMap<String, f64>,
}

/// Populate the full schema for one (issue, commit) pair. Temporal features
/// are signed fractional days; flags are 0/1. A missing assignee leaves the
/// assignee-overlap flag at 0, so overlap falls back to the reporter flag.
pub fn extract_features(
    issue: &IssueRecord,
    commit: &CommitRecord,
    ctx: &FeatureContext<'_>,
) -> FeatureVector {
    let message = scrub_identifiers(&commit.message, ctx.pattern);
    let code_terms = commit
        .file_changes
        .iter()
        .map(|fc| {
            let mut line = format!("{} {}", fc.change_type, fc.path);
            for m in &fc.methods {
                line.push(' ');
                line.push_str(m);
            }
            line
        })
        .collect::<Vec<_>>()
        .join("\n");
    let doc_text = if code_terms.is_empty() {
        message.clone()
    } else {
        format!("{message}\n{code_terms}")
    };

    let query_tokens = tokenize(ctx.query_text);
    let doc_tokens = tokenize(&doc_text);
    let query_set: BTreeSet<&str> = query_tokens.iter().map(String::as_str).collect();
    let doc_set: BTreeSet<&str> = doc_tokens.iter().map(String::as_str).collect();
    let shared: Vec<&str> = query_set.intersection(&doc_set).copied().collect();
    let union = query_set.union(&doc_set).count();
    let jaccard = if union == 0 {
        0.0
    } else {
        shared.len() as f64 / union as f64
    };
    let shared_rare = shared
        .iter()
        .filter(|t| ctx.space.doc_freq(t) <= 2)
        .count();

    let closure = issue.usable_closed_at();
    let days_commit_to_closure = closure
        .map(|c| c.days_since(commit.committed_at))
        .unwrap_or(0.0);
    let within_buffer = ctx.policy.closure_enabled()
        && closure.is_some_and(|c| {
            let start = c.plus_days(-(ctx.policy.closure_before_days.unwrap_or(0) as i64));
            let end = c.plus_days(ctx.policy.closure_after_days.unwrap_or(0) as i64);
            commit.committed_at >= start && commit.committed_at <= end
        });
    let author_is_reporter = !commit.author.is_empty() && commit.author == issue.reporter;
    let author_is_assignee = !commit.author.is_empty()
        && issue.assignee.as_deref() == Some(commit.author.as_str());

    let values = [
        ctx.space.cosine(ctx.query_text, &message),
        ctx.space.cosine(ctx.query_text, &code_terms),
        jaccard,
        shared.len() as f64,
        shared_rare as f64,
        query_tokens.len() as f64,
        doc_tokens.len() as f64,
        ctx.bm25_scores.get(&commit.hash).copied().unwrap_or(0.0),
        commit.committed_at.days_since(issue.created_at),
        days_commit_to_closure,
        f64::from(within_buffer as u8),
        f64::from(author_is_reporter as u8),
        f64::from(author_is_assignee as u8),
        commit.file_changes.len() as f64,
        commit.file_changes.iter().map(|fc| fc.methods.len()).sum::<usize>() as f64,
        ctx.rrf_scores.get(&commit.hash).copied().unwrap_or(0.0),
    ];
    debug_assert!(values.iter().all(|v| v.is_finite()));
    FeatureVector {
        values,
        label: None,
    }
}
