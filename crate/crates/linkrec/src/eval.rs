//! Chronological splitting, test sampling, and ranking metrics
//! (Precision@K, Hit@K, Recall@K, MRR@K, NDCG@K) with run-report
//! aggregation.
//!
//! Relevance is binary (true-link membership), so the `2^rel - 1` NDCG gain
//! equals the relevance itself. MRR@K truncates the reciprocal rank at K;
//! the untruncated variant is also reported as `mrr@inf`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{IssueRecord, TrueLink};
use crate::error::Error;
use crate::retrieval::RankedList;
use crate::time::Timestamp;
use crate::Result;

/// Default evaluation cutoffs.
pub const DEFAULT_KS: [usize; 6] = [1, 5, 10, 20, 30, 50];

/// A chronological train/test partition of a project's issues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChronoSplit {
    pub train_issue_keys: BTreeSet<String>,
    pub test_issue_keys: BTreeSet<String>,
    /// Creation time of the earliest test issue.
    pub boundary_timestamp: Timestamp,
    pub ratio: f64,
}

/// Assign the newest `ceil(ratio * n)` issues (by creation time, ties by
/// issue_key) to the test set. Requires at least 5 issues.
pub fn chrono_split(issues: &[IssueRecord], ratio: f64) -> Result<ChronoSplit> {
    if issues.len() < 5 {
        return Err(Error::Eval(format!(
            "chronological split needs at least 5 issues, got {}",
            issues.len()
        )));
    }
    if !(0.0..1.0).contains(&ratio) || ratio == 0.0 {
        return Err(Error::Eval(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let mut ordered: Vec<&IssueRecord> = issues.iter().collect();
    ordered.sort_by(|a, b| {
        a.created_at
            .cmp(&b.created_at)
            .then_with(|| a.issue_key.cmp(&b.issue_key))
    });
    let n_test = (ratio * ordered.len() as f64).ceil() as usize;
    let split_at = ordered.len() - n_test;
    let boundary_timestamp = ordered[split_at].created_at;
    Ok(ChronoSplit {
        train_issue_keys: ordered[..split_at].iter().map(|i| i.issue_key.clone()).collect(),
        test_issue_keys: ordered[split_at..].iter().map(|i| i.issue_key.clone()).collect(),
        boundary_timestamp,
        ratio,
    })
}

/// Seeded test-set sampling: when the test set has at most `n` issues the
/// single sample is the whole set; otherwise `repeats` samples of size `n`
/// are drawn without replacement.
pub fn sample_test(
    test_issue_keys: &BTreeSet<String>,
    n: usize,
    repeats: usize,
    seed: u64,
) -> Vec<Vec<String>> {
    let all: Vec<String> = test_issue_keys.iter().cloned().collect();
    if all.len() <= n {
        return vec![all];
    }
    (0..repeats.max(1))
        .map(|rep| {
            let mut rng =
                ChaCha20Rng::seed_from_u64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(rep as u64 + 1)));
            // Partial Fisher-Yates: the first n slots become the sample.
            let mut pool = all.clone();
            for i in 0..n {
                let j = rng.gen_range(i..pool.len());
                pool.swap(i, j);
            }
            let mut sample = pool[..n].to_vec();
            sample.sort_unstable();
            sample
        })
        .collect()
}

/// Binary relevance judgments: the set of linked commit hashes per issue.
/// Only issues with at least one relevant document are present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RelevanceJudgments {
    per_query: BTreeMap<String, BTreeSet<String>>,
}

impl RelevanceJudgments {
    pub fn from_links(links: &[TrueLink]) -> Self {
        let mut per_query: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for link in links {
            per_query
                .entry(link.issue_key.clone())
                .or_default()
                .insert(link.commit_hash.clone());
        }
        RelevanceJudgments { per_query }
    }

    pub fn insert(&mut self, query_id: &str, relevant: impl IntoIterator<Item = String>) {
        let set: BTreeSet<String> = relevant.into_iter().collect();
        if !set.is_empty() {
            self.per_query.insert(query_id.to_string(), set);
        }
    }

    pub fn relevant(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.per_query.get(query_id)
    }

    pub fn is_judged(&self, query_id: &str) -> bool {
        self.per_query.contains_key(query_id)
    }

    pub fn len(&self) -> usize {
        self.per_query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_query.is_empty()
    }
}

/// The five ranking metrics at one cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsAtK {
    pub precision: f64,
    pub hit: f64,
    pub recall: f64,
    pub mrr: f64,
    pub ndcg: f64,
}

/// Compute the metrics at cutoff `k` for one ranked list. Returns `None`
/// when the query has no judgments (the caller excludes and counts it).
pub fn metrics_at_k(
    ranked: &RankedList,
    judgments: &RelevanceJudgments,
    k: usize,
) -> Option<MetricsAtK> {
    let relevant = judgments.relevant(&ranked.query_id)?;
    let total_rel = relevant.len();
    debug_assert!(k >= 1 && total_rel >= 1);

    let rel_in_top_k = ranked
        .entries
        .iter()
        .take(k)
        .filter(|e| relevant.contains(&e.doc_id))
        .count();
    let first_rel_rank = ranked
        .entries
        .iter()
        .position(|e| relevant.contains(&e.doc_id))
        .map(|i| i + 1);

    let hit = first_rel_rank.is_some_and(|r| r <= k);
    let mrr = first_rel_rank
        .filter(|&r| r <= k)
        .map(|r| 1.0 / r as f64)
        .unwrap_or(0.0);

    // Binary gains: 2^rel - 1 = rel, discount log2(position + 1).
    let dcg: f64 = ranked
        .entries
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, e)| relevant.contains(&e.doc_id))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..total_rel.min(k)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();

    Some(MetricsAtK {
        precision: rel_in_top_k as f64 / k as f64,
        hit: f64::from(hit as u8),
        recall: rel_in_top_k as f64 / total_rel as f64,
        mrr,
        ndcg: if idcg > 0.0 { dcg / idcg } else { 0.0 },
    })
}

/// Untruncated reciprocal rank of the first relevant document (0 when none
/// is retrieved at all).
pub fn mrr_unbounded(ranked: &RankedList, judgments: &RelevanceJudgments) -> Option<f64> {
    let relevant = judgments.relevant(&ranked.query_id)?;
    Some(
        ranked
            .entries
            .iter()
            .position(|e| relevant.contains(&e.doc_id))
            .map(|i| 1.0 / (i + 1) as f64)
            .unwrap_or(0.0),
    )
}

/// One query's metric values within one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerQueryRow {
    pub sample_id: usize,
    pub query_id: String,
    /// `metric@k` -> value, plus `mrr@inf`.
    pub metrics: BTreeMap<String, f64>,
}

/// Aggregated evaluation of one system: per-sample means averaged over
/// samples, with the full per-query table retained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Which retriever/reranker produced the evaluated lists.
    pub system: String,
    pub ks: Vec<usize>,
    pub samples: usize,
    /// Judged query evaluations summed over samples.
    pub n_queries: usize,
    /// Sampled queries without judgments, excluded from the means.
    pub excluded_queries: usize,
    /// `metric@k` -> mean over samples of the per-sample query means.
    pub means: BTreeMap<String, f64>,
    pub per_query: Vec<PerQueryRow>,
    pub config_fingerprint: String,
}

fn metric_key(name: &str, k: usize) -> String {
    format!("{name}@{k}")
}

/// Evaluate one system's ranked lists over seeded samples of judged
/// queries.
///
/// A sampled query that is judged but missing from `ranked_lists` (empty
/// pool, window miss) still counts, scoring 0 on every metric. Errors when
/// no judged query remains.
pub fn evaluate_run(
    system: &str,
    ranked_lists: &HashMap<String, RankedList>,
    judgments: &RelevanceJudgments,
    ks: &[usize],
    samples: &[Vec<String>],
    config_fingerprint: &str,
) -> Result<EvaluationReport> {
    let mut per_query = Vec::new();
    let mut excluded = 0usize;
    let mut sample_means: Vec<BTreeMap<String, f64>> = Vec::new();

    for (sample_id, sample) in samples.iter().enumerate() {
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        let mut judged_in_sample = 0usize;
        for query_id in sample {
            if !judgments.is_judged(query_id) {
                excluded += 1;
                continue;
            }
            judged_in_sample += 1;
            let empty;
            let ranked = match ranked_lists.get(query_id) {
                Some(list) => list,
                None => {
                    empty = RankedList::empty(query_id, system);
                    &empty
                }
            };
            let mut metrics: BTreeMap<String, f64> = BTreeMap::new();
            for &k in ks {
                let m = metrics_at_k(ranked, judgments, k).expect("query is judged");
                metrics.insert(metric_key("p", k), m.precision);
                metrics.insert(metric_key("hit", k), m.hit);
                metrics.insert(metric_key("r", k), m.recall);
                metrics.insert(metric_key("mrr", k), m.mrr);
                metrics.insert(metric_key("ndcg", k), m.ndcg);
            }
            metrics.insert("mrr@inf".into(), mrr_unbounded(ranked, judgments).expect("judged"));
            for (key, value) in &metrics {
                *sums.entry(key.clone()).or_insert(0.0) += value;
            }
            per_query.push(PerQueryRow {
                sample_id,
                query_id: query_id.clone(),
                metrics,
            });
        }
        if judged_in_sample > 0 {
            sample_means.push(
                sums.into_iter()
                    .map(|(key, sum)| (key, sum / judged_in_sample as f64))
                    .collect(),
            );
        }
    }

    if per_query.is_empty() {
        return Err(Error::Eval("no judged queries to evaluate".into()));
    }

    let mut means: BTreeMap<String, f64> = BTreeMap::new();
    for sample in &sample_means {
        for (key, value) in sample {
            *means.entry(key.clone()).or_insert(0.0) += value;
        }
    }
    for value in means.values_mut() {
        *value /= sample_means.len() as f64;
    }

    Ok(EvaluationReport {
        system: system.to_string(),
        ks: ks.to_vec(),
        samples: samples.len(),
        n_queries: per_query.len(),
        excluded_queries: excluded,
        means,
        per_query,
        config_fingerprint: config_fingerprint.to_string(),
    })
}

/// Columns of the standard results table.
pub const TABLE_COLUMNS: [&str; 12] = [
    "p@1", "r@1", "p@10", "hit@10", "r@10", "mrr@10", "ndcg@10", "p@20", "hit@20", "r@20",
    "mrr@20", "ndcg@20",
];

/// Render reports as a fixed-width table mirroring the usual column layout
/// (P@1, R@1, P@10, Hit@10, R@10, MRR@10, NDCG@10, then the same at 20).
pub fn format_report_table(reports: &[&EvaluationReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<14}", "system"));
    for col in TABLE_COLUMNS {
        out.push_str(&format!("{:>9}", col.to_uppercase()));
    }
    out.push('\n');
    for report in reports {
        out.push_str(&format!("{:<14}", report.system));
        for col in TABLE_COLUMNS {
            match report.means.get(col) {
                Some(v) => out.push_str(&format!("{v:>9.3}")),
                None => out.push_str(&format!("{:>9}", "-")),
            }
        }
        out.push('\n');
    }
    out
}
