//! Reciprocal Rank Fusion.

use std::collections::BTreeMap;

use crate::error::Error;
use crate::Result;

use super::RankedList;

/// RRF constant: score contribution is `1 / (60 + rank)` with 1-based ranks.
pub const DEFAULT_RRF_K: u32 = 60;

/// Fused candidate set size.
pub const DEFAULT_RRF_TOP_N: usize = 50;

/// Fuse ranked lists: each document scores the sum of `1 / (rrf_k + rank)`
/// over the lists containing it (ranks 1-based), and the top `top_n` by
/// fused score form the output.
///
/// The result is invariant under permutation of the input lists; ties order
/// by ascending doc_id.
pub fn rrf_fuse(lists: &[RankedList], rrf_k: u32, top_n: usize) -> Result<RankedList> {
    if lists.is_empty() {
        return Err(Error::NoInputLists);
    }
    let query_id = lists[0].query_id.clone();

    // Collect per-document contributions, then sum each set in sorted order
    // so float rounding cannot depend on the order lists were supplied in.
    let mut contributions: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for list in lists {
        for (idx, entry) in list.entries.iter().enumerate() {
            let rank = idx + 1;
            contributions
                .entry(entry.doc_id.as_str())
                .or_default()
                .push(1.0 / (rrf_k as f64 + rank as f64));
        }
    }
    let scores: Vec<(String, f64)> = contributions
        .into_iter()
        .map(|(doc, mut parts)| {
            parts.sort_by(f64::total_cmp);
            (doc.to_string(), parts.iter().sum())
        })
        .collect();
    Ok(RankedList::from_scores(&query_id, "rrf", scores, top_n))
}
