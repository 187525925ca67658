//! TF-IDF threshold scorer: pairs score the cosine of issue and commit
//! texts over the pool vocabulary, and a threshold is learned so that at
//! least 90% of training positives score at or above it.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

use super::tfidf::TfIdfSpace;

/// Recall level the learned threshold guarantees on its training positives.
pub const RECALL_TARGET: f64 = 0.90;

/// A learned score threshold; pairs scoring below it are classified
/// non-links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrlinkModel {
    pub threshold: f64,
}

impl FrlinkModel {
    pub fn is_link(&self, score: f64) -> bool {
        score >= self.threshold
    }
}

/// The 10th percentile (lower interpolation) of the positive training
/// scores: sorted ascending, index floor(0.10 * (n - 1)). At least 90% of
/// the training positives score >= the returned threshold.
///
/// Requires at least 10 positive pairs.
pub fn frlink_threshold(positive_scores: &[f64]) -> Result<FrlinkModel> {
    if positive_scores.len() < 10 {
        return Err(Error::Train(format!(
            "threshold learning needs >= 10 positive pairs, got {}",
            positive_scores.len()
        )));
    }
    let mut sorted = positive_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((1.0 - RECALL_TARGET) * (sorted.len() - 1) as f64).floor() as usize;
    Ok(FrlinkModel {
        threshold: sorted[idx],
    })
}

/// Cosine similarity of the issue query and commit document texts in the
/// pool's tf-idf space. An empty (or fully out-of-vocabulary) query scores
/// 0 with a warning.
pub fn frlink_score(space: &TfIdfSpace, query_text: &str, doc_text: &str) -> f64 {
    let qv = space.vector(query_text);
    if qv.is_empty() {
        log::warn!("frlink: degenerate query {query_text:?}, scoring 0");
        return 0.0;
    }
    let dv = space.vector(doc_text);
    qv.iter()
        .filter_map(|(term, x)| dv.get(term).map(|y| x * y))
        .sum()
}
