//! Reranking a short candidate list per issue (K = 20): hard-negative
//! training-set construction, a feature-based forest scorer, a TF-IDF
//! threshold scorer, and remote list/pairwise rerankers.
//!
//! Every reranker permutes its candidate set; fallback paths preserve it.

mod external;
mod features;
mod forest;
mod frlink;
mod llm;
mod tfidf;

pub use external::{external_score, rerank_with_pair_endpoint, PairScoreClient};
pub use features::{
    extract_features, FeatureContext, FeatureVector, FEATURE_COUNT, FEATURE_NAMES,
    FEATURE_SCHEMA_VERSION,
};
pub use forest::{score_forest, train_forest, DecisionTree, ForestModel, ForestParams};
pub use frlink::{frlink_score, frlink_threshold, FrlinkModel, RECALL_TARGET};
pub use llm::{
    llm_rerank, parse_llm_order, render_rerank_prompt, ChatClient, ChatMessage,
    RerankRequestBatch, DEFAULT_MESSAGE_CHAR_BUDGET, PROMPT_TEMPLATE_VERSION,
};
pub use tfidf::TfIdfSpace;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::IssueRecord;
use crate::error::Error;
use crate::retrieval::RankedList;
use crate::Result;

/// Hard negatives taken from the top of the fused retrieval list per issue.
pub const HARD_NEGATIVES_PER_ISSUE: usize = 10;

/// Candidates handed to each reranker per issue.
pub const RERANK_CANDIDATES: usize = 20;

/// Sentinel score a pair keeps when its scorer fails; minimal but finite so
/// lists stay serializable.
pub const FAILED_PAIR_SCORE: f64 = f64::MIN;

/// Bounded retry with exponential backoff for remote calls.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            backoff: Duration::from_millis(200),
        }
    }
}

impl RetryPolicy {
    /// Single attempt, no waiting.
    pub fn none() -> Self {
        RetryPolicy {
            attempts: 1,
            backoff: Duration::ZERO,
        }
    }

    /// Run `op` up to `attempts` times, sleeping `backoff * 2^i` between
    /// tries.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T>) -> Result<T> {
        let attempts = self.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) => {
                    last = e.to_string();
                    if attempt + 1 < attempts {
                        std::thread::sleep(self.backoff * 2u32.pow(attempt));
                    }
                }
            }
        }
        Err(Error::Remote {
            attempts,
            message: last,
        })
    }
}

/// Per-issue reranking diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankEvents {
    /// The scorer failed entirely and the retrieval order was kept.
    pub fallback: bool,
    /// Pairs that kept the sentinel score after a per-pair failure.
    pub failed_pairs: usize,
    /// Candidate messages truncated to the prompt character budget.
    pub truncated_messages: usize,
}

/// A per-pair relevance scorer over a fixed issue context; higher is more
/// relevant.
pub trait CandidateScorer {
    fn name(&self) -> &str;
    fn score(&self, doc_id: &str) -> Result<f64>;
}

/// Reorder (never add or drop) the top `k` candidates by scorer score
/// descending; ties keep the original retrieval order. A pair whose scorer
/// fails keeps [`FAILED_PAIR_SCORE`] and is logged.
pub fn rerank_with_model(
    scorer: &dyn CandidateScorer,
    candidates: &RankedList,
    k: usize,
) -> (RankedList, RerankEvents) {
    let mut events = RerankEvents::default();
    let mut scored: Vec<(String, f64)> = candidates
        .entries
        .iter()
        .take(k)
        .map(|entry| {
            let score = scorer.score(&entry.doc_id).unwrap_or_else(|e| {
                log::warn!(
                    "issue {}: scorer {} failed on {}: {e}",
                    candidates.query_id,
                    scorer.name(),
                    entry.doc_id
                );
                events.failed_pairs += 1;
                FAILED_PAIR_SCORE
            });
            (entry.doc_id.clone(), score)
        })
        .collect();
    // Stable sort: equal scores keep retrieval order.
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    (
        RankedList::pre_ranked(&candidates.query_id, scorer.name(), scored),
        events,
    )
}

/// One labeled training pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub issue_key: String,
    pub commit_hash: String,
    pub positive: bool,
}

/// Build the reranker training set: every true link of each training issue
/// as a positive, and the top [`HARD_NEGATIVES_PER_ISSUE`] fused-retrieval
/// commits (true links removed, retrieval order preserved) as hard
/// negatives.
///
/// Issues with no true links contribute nothing; an issue whose pool
/// produced no retrieval list contributes positives only, with a warning.
/// Returns the pairs and the count of such empty-pool issues.
pub fn make_training_set(
    train_issues: &[&IssueRecord],
    links_by_issue: &BTreeMap<String, BTreeSet<String>>,
    fused_lists: &HashMap<String, RankedList>,
) -> (Vec<TrainingPair>, usize) {
    let mut pairs = Vec::new();
    let mut empty_pools = 0usize;
    for issue in train_issues {
        let Some(links) = links_by_issue.get(&issue.issue_key) else {
            continue;
        };
        if links.is_empty() {
            continue;
        }
        for hash in links {
            pairs.push(TrainingPair {
                issue_key: issue.issue_key.clone(),
                commit_hash: hash.clone(),
                positive: true,
            });
        }
        match fused_lists.get(&issue.issue_key) {
            Some(list) if !list.entries.is_empty() => {
                for entry in list
                    .entries
                    .iter()
                    .filter(|e| !links.contains(&e.doc_id))
                    .take(HARD_NEGATIVES_PER_ISSUE)
                {
                    pairs.push(TrainingPair {
                        issue_key: issue.issue_key.clone(),
                        commit_hash: entry.doc_id.clone(),
                        positive: false,
                    });
                }
            }
            _ => {
                log::warn!(
                    "issue {}: empty candidate pool, contributing positives only",
                    issue.issue_key
                );
                empty_pools += 1;
            }
        }
    }
    (pairs, empty_pools)
}

/// Scores candidates by a precomputed feature table and a trained forest.
pub struct ForestScorer<'a> {
    pub model: &'a ForestModel,
    pub features: &'a HashMap<String, FeatureVector>,
}

impl CandidateScorer for ForestScorer<'_> {
    fn name(&self) -> &str {
        "forest"
    }

    fn score(&self, doc_id: &str) -> Result<f64> {
        let features = self
            .features
            .get(doc_id)
            .ok_or_else(|| Error::Eval(format!("no features for candidate {doc_id}")))?;
        score_forest(self.model, features)
    }
}

/// Scores candidates by tf-idf cosine against the issue query.
pub struct FrlinkScorer<'a> {
    pub space: &'a TfIdfSpace,
    pub query_text: &'a str,
    pub doc_texts: &'a HashMap<String, String>,
}

impl CandidateScorer for FrlinkScorer<'_> {
    fn name(&self) -> &str {
        "frlink"
    }

    fn score(&self, doc_id: &str) -> Result<f64> {
        let text = self
            .doc_texts
            .get(doc_id)
            .ok_or_else(|| Error::Eval(format!("no document text for candidate {doc_id}")))?;
        Ok(frlink_score(self.space, self.query_text, text))
    }
}

/// Returns each candidate's original retrieval score; reranking with it is
/// the identity permutation.
pub struct RetrievalOrderScorer<'a> {
    pub list: &'a RankedList,
}

impl CandidateScorer for RetrievalOrderScorer<'_> {
    fn name(&self) -> &str {
        "identity"
    }

    fn score(&self, doc_id: &str) -> Result<f64> {
        self.list
            .score_of(doc_id)
            .ok_or_else(|| Error::Eval(format!("{doc_id} not in retrieval list")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::Timestamp;

    fn issue(key: &str) -> IssueRecord {
        IssueRecord {
            project_id: "p".into(),
            issue_key: key.into(),
            title: String::new(),
            description: String::new(),
            reporter: String::new(),
            assignee: None,
            created_at: Timestamp::from_epoch_seconds(0),
            closed_at: None,
            status: String::new(),
        }
    }

    fn list(query: &str, ids: &[&str]) -> RankedList {
        let n = ids.len() as f64;
        RankedList::from_scores(
            query,
            "rrf",
            ids.iter()
                .enumerate()
                .map(|(i, id)| (id.to_string(), n - i as f64))
                .collect(),
            ids.len(),
        )
    }

    #[test]
    fn training_set_excludes_true_links_from_negatives() {
        // True link at fused rank 2: negatives are ranks {1, 3..11}.
        let i = issue("K-1");
        let ids: Vec<String> = (0..15).map(|n| format!("c{n:02}")).collect();
        let fused = list("K-1", &ids.iter().map(String::as_str).collect::<Vec<_>>());
        let links: BTreeMap<String, BTreeSet<String>> =
            [("K-1".to_string(), BTreeSet::from(["c01".to_string()]))].into();
        let lists: HashMap<String, RankedList> = [("K-1".to_string(), fused)].into();
        let (pairs, empty) = make_training_set(&[&i], &links, &lists);
        assert_eq!(empty, 0);
        let positives: Vec<&TrainingPair> = pairs.iter().filter(|p| p.positive).collect();
        let negatives: Vec<&TrainingPair> = pairs.iter().filter(|p| !p.positive).collect();
        assert_eq!(positives.len(), 1);
        assert_eq!(negatives.len(), 10);
        let neg_ids: Vec<&str> = negatives.iter().map(|p| p.commit_hash.as_str()).collect();
        assert_eq!(
            neg_ids,
            ["c00", "c02", "c03", "c04", "c05", "c06", "c07", "c08", "c09", "c10"]
        );
    }

    #[test]
    fn training_set_small_pool() {
        let i = issue("K-1");
        let fused = list("K-1", &["c0", "c1", "c2", "c3", "c4", "c5"]);
        let links: BTreeMap<String, BTreeSet<String>> =
            [("K-1".to_string(), BTreeSet::from(["c2".to_string()]))].into();
        let lists: HashMap<String, RankedList> = [("K-1".to_string(), fused)].into();
        let (pairs, _) = make_training_set(&[&i], &links, &lists);
        assert_eq!(pairs.iter().filter(|p| p.positive).count(), 1);
        assert_eq!(pairs.iter().filter(|p| !p.positive).count(), 5);
    }

    #[test]
    fn training_set_two_links_outside_top10() {
        let i = issue("K-1");
        let ids: Vec<String> = (0..12).map(|n| format!("c{n:02}")).collect();
        let fused = list("K-1", &ids.iter().map(String::as_str).collect::<Vec<_>>());
        let links: BTreeMap<String, BTreeSet<String>> = [(
            "K-1".to_string(),
            BTreeSet::from(["zz1".to_string(), "zz2".to_string()]),
        )]
        .into();
        let lists: HashMap<String, RankedList> = [("K-1".to_string(), fused)].into();
        let (pairs, _) = make_training_set(&[&i], &links, &lists);
        assert_eq!(pairs.iter().filter(|p| p.positive).count(), 2);
        assert_eq!(pairs.iter().filter(|p| !p.positive).count(), 10);
    }

    #[test]
    fn training_set_empty_pool_warns_and_keeps_positives() {
        let i = issue("K-1");
        let links: BTreeMap<String, BTreeSet<String>> =
            [("K-1".to_string(), BTreeSet::from(["c1".to_string()]))].into();
        let lists: HashMap<String, RankedList> = HashMap::new();
        let (pairs, empty) = make_training_set(&[&i], &links, &lists);
        assert_eq!(empty, 1);
        assert_eq!(pairs.len(), 1);
        assert!(pairs[0].positive);
    }

    #[test]
    fn no_negative_is_ever_a_true_link() {
        let issues: Vec<IssueRecord> = (0..20).map(|i| issue(&format!("K-{i}"))).collect();
        let refs: Vec<&IssueRecord> = issues.iter().collect();
        let mut links: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut lists: HashMap<String, RankedList> = HashMap::new();
        for (n, i) in issues.iter().enumerate() {
            let ids: Vec<String> = (0..15).map(|c| format!("c{n}x{c:02}")).collect();
            links.insert(
                i.issue_key.clone(),
                BTreeSet::from([ids[n % 15].clone(), ids[(n + 3) % 15].clone()]),
            );
            lists.insert(
                i.issue_key.clone(),
                list(&i.issue_key, &ids.iter().map(String::as_str).collect::<Vec<_>>()),
            );
        }
        let (pairs, _) = make_training_set(&refs, &links, &lists);
        for pair in pairs.iter().filter(|p| !p.positive) {
            assert!(
                !links[&pair.issue_key].contains(&pair.commit_hash),
                "negative {} labeled for {} is a true link",
                pair.commit_hash,
                pair.issue_key
            );
        }
        let mut per_issue: HashMap<&str, usize> = HashMap::new();
        for pair in pairs.iter().filter(|p| !p.positive) {
            *per_issue.entry(pair.issue_key.as_str()).or_default() += 1;
        }
        assert!(per_issue.values().all(|&n| n <= HARD_NEGATIVES_PER_ISSUE));
    }

    #[test]
    fn identity_scorer_keeps_input_order() {
        let candidates = list("K-1", &["c1", "c2", "c3", "c4"]);
        let scorer = RetrievalOrderScorer { list: &candidates };
        let (out, events) = rerank_with_model(&scorer, &candidates, 20);
        let got: Vec<&str> = out.doc_ids().collect();
        assert_eq!(got, ["c1", "c2", "c3", "c4"]);
        assert_eq!(events, RerankEvents::default());
    }

    struct MapScorer(HashMap<String, f64>);

    impl CandidateScorer for MapScorer {
        fn name(&self) -> &str {
            "map"
        }
        fn score(&self, doc_id: &str) -> Result<f64> {
            self.0
                .get(doc_id)
                .copied()
                .ok_or_else(|| Error::Eval("missing".into()))
        }
    }

    #[test]
    fn true_link_with_top_score_promoted_to_rank_one() {
        let candidates = list("K-1", &["c1", "c2", "c3"]);
        let scorer = MapScorer(
            [
                ("c1".to_string(), 0.0),
                ("c2".to_string(), 0.0),
                ("c3".to_string(), 1.0),
            ]
            .into(),
        );
        let (out, _) = rerank_with_model(&scorer, &candidates, 20);
        let got: Vec<&str> = out.doc_ids().collect();
        // Ties between c1 and c2 keep retrieval order.
        assert_eq!(got, ["c3", "c1", "c2"]);
    }

    #[test]
    fn scorer_failure_keeps_pair_with_sentinel() {
        let candidates = list("K-1", &["c1", "c2", "c3"]);
        let scorer = MapScorer([("c1".to_string(), 0.2), ("c3".to_string(), 0.9)].into());
        let (out, events) = rerank_with_model(&scorer, &candidates, 20);
        assert_eq!(events.failed_pairs, 1);
        let got: Vec<&str> = out.doc_ids().collect();
        assert_eq!(got, ["c3", "c1", "c2"]);
        assert_eq!(out.score_of("c2"), Some(FAILED_PAIR_SCORE));
    }

    #[test]
    fn rerank_is_a_permutation_of_its_input() {
        let ids: Vec<String> = (0..20).map(|i| format!("c{i:02}")).collect();
        let candidates = list("K-1", &ids.iter().map(String::as_str).collect::<Vec<_>>());
        let scorer = MapScorer(
            ids.iter()
                .enumerate()
                .map(|(i, id)| (id.clone(), ((i * 7919) % 13) as f64))
                .collect(),
        );
        let (out, _) = rerank_with_model(&scorer, &candidates, 20);
        let mut got: Vec<&str> = out.doc_ids().collect();
        got.sort_unstable();
        let mut want: Vec<&str> = ids.iter().map(String::as_str).collect();
        want.sort_unstable();
        assert_eq!(got, want);
    }

    #[test]
    fn retry_policy_retries_then_errors() {
        let mut calls = 0;
        let policy = RetryPolicy {
            attempts: 3,
            backoff: Duration::ZERO,
        };
        let result: Result<()> = policy.run(|| {
            calls += 1;
            Err(Error::Eval("boom".into()))
        });
        assert_eq!(calls, 3);
        assert!(matches!(result, Err(Error::Remote { attempts: 3, .. })));

        let mut calls = 0;
        let ok: Result<u32> = policy.run(|| {
            calls += 1;
            if calls < 2 {
                Err(Error::Eval("flaky".into()))
            } else {
                Ok(7)
            }
        });
        assert_eq!(ok.unwrap(), 7);
        assert_eq!(calls, 2);
    }
}
