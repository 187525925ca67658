//! Pairwise scoring through a generic remote endpoint
//! (`{"pairs": [[query, doc], ...]} -> {"scores": [...]}`). Cross-encoder
//! style models participate in the pipeline only through this contract.

use std::collections::HashMap;

use crate::error::Error;
use crate::retrieval::RankedList;
use crate::Result;

use super::{RerankEvents, RetryPolicy};

/// A batch (query, document) relevance scorer; higher is more relevant.
/// Scores come back in request order.
pub trait PairScoreClient: Send + Sync {
    fn score_pairs(&self, pairs: &[(String, String)]) -> Result<Vec<f64>>;
}

/// Score a single pair through the endpoint, with retries.
pub fn external_score(
    client: &dyn PairScoreClient,
    retry: &RetryPolicy,
    issue_text: &str,
    commit_text: &str,
) -> Result<f64> {
    let pairs = vec![(issue_text.to_string(), commit_text.to_string())];
    let scores = retry.run(|| client.score_pairs(&pairs))?;
    scores
        .first()
        .copied()
        .ok_or_else(|| Error::Remote {
            attempts: retry.attempts,
            message: "endpoint returned no scores".into(),
        })
}

/// Rerank the top `k` candidates by one batched endpoint call. On failure
/// (after retries) or a malformed response, the retrieval order is kept and
/// the issue flagged as a fallback.
pub fn rerank_with_pair_endpoint(
    client: &dyn PairScoreClient,
    retry: &RetryPolicy,
    issue_text: &str,
    candidates: &RankedList,
    doc_texts: &HashMap<String, String>,
    k: usize,
) -> (RankedList, RerankEvents) {
    let mut events = RerankEvents::default();
    let top: Vec<&str> = candidates.doc_ids().take(k).collect();
    let pairs: Vec<(String, String)> = top
        .iter()
        .map(|id| {
            (
                issue_text.to_string(),
                doc_texts.get(*id).cloned().unwrap_or_default(),
            )
        })
        .collect();

    let scores = match retry.run(|| client.score_pairs(&pairs)) {
        Ok(scores) if scores.len() == pairs.len() => scores,
        Ok(scores) => {
            log::warn!(
                "issue {}: scoring endpoint returned {} scores for {} pairs, keeping retrieval order",
                candidates.query_id,
                scores.len(),
                pairs.len()
            );
            events.fallback = true;
            return (fallback_order(candidates, &top), events);
        }
        Err(e) => {
            log::warn!("issue {}: scoring endpoint failed, keeping retrieval order: {e}", candidates.query_id);
            events.fallback = true;
            return (fallback_order(candidates, &top), events);
        }
    };

    let mut scored: Vec<(String, f64)> = top
        .iter()
        .zip(&scores)
        .map(|(id, &score)| (id.to_string(), score))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    (
        RankedList::pre_ranked(&candidates.query_id, "external", scored),
        events,
    )
}

fn fallback_order(candidates: &RankedList, top: &[&str]) -> RankedList {
    let entries: Vec<(String, f64)> = top
        .iter()
        .enumerate()
        .map(|(i, id)| (id.to_string(), 1.0 / (i + 1) as f64))
        .collect();
    RankedList::pre_ranked(&candidates.query_id, "external", entries)
}
