//! List-wise reranking through a chat-completions endpoint, with robust
//! order parsing and a fallback to the retrieval order.

use serde::{Deserialize, Serialize};

use crate::retrieval::RankedList;
use crate::Result;

use super::{RerankEvents, RetryPolicy};

/// Version of the fixed prompt template below.
pub const PROMPT_TEMPLATE_VERSION: u32 = 1;

/// Character budget per candidate commit message in the rendered prompt.
pub const DEFAULT_MESSAGE_CHAR_BUDGET: usize = 1000;

/// One message in a chat-completions request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// A chat-completions backend; the HTTP implementation lives in
/// [`crate::remote`], tests use in-process stubs.
pub trait ChatClient: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String>;
}

/// The issue and its candidate commits handed to a list reranker; at most
/// 20 candidates, distinct ids, in retrieval order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankRequestBatch {
    pub query_id: String,
    /// Concatenated issue title and description, keys scrubbed.
    pub issue_text: String,
    /// (commit id, commit message) pairs in retrieval order.
    pub candidates: Vec<(String, String)>,
}

/// Render the fixed reranking prompt: the issue text, then each candidate's
/// id and (budget-truncated) message, then the ordering instruction.
/// Returns the prompt and how many messages were truncated.
pub fn render_rerank_prompt(batch: &RerankRequestBatch, message_char_budget: usize) -> (String, usize) {
    let mut truncated = 0usize;
    let mut prompt = String::new();
    prompt.push_str("You are ranking version-control commits by how relevant they are to an issue report.\n\n");
    prompt.push_str("Issue:\n");
    prompt.push_str(&batch.issue_text);
    prompt.push_str("\n\nCandidate commits:\n");
    for (id, message) in &batch.candidates {
        let mut msg = message.as_str();
        if msg.chars().count() > message_char_budget {
            let end = msg
                .char_indices()
                .nth(message_char_budget)
                .map(|(i, _)| i)
                .unwrap_or(msg.len());
            msg = &msg[..end];
            truncated += 1;
        }
        prompt.push_str("\nid: ");
        prompt.push_str(id);
        prompt.push_str("\nmessage: ");
        prompt.push_str(msg);
        prompt.push('\n');
    }
    prompt.push_str(
        "\nRe-rank the candidate commits from most to least relevant to the issue. \
         Return only the ordered commit ids, one per line, most relevant first, \
         with no other text.\n",
    );
    (prompt, truncated)
}

/// Extract candidate-id occurrences from a model response in
/// first-appearance order, matching on the full id or a unique prefix of at
/// least 7 characters; duplicates count once, unknown ids are ignored, and
/// missing candidates are appended in retrieval order. Always returns a
/// permutation of `candidate_ids`.
pub fn parse_llm_order(raw: &str, candidate_ids: &[String]) -> Vec<String> {
    let mut order: Vec<usize> = Vec::new();
    let mut used = vec![false; candidate_ids.len()];

    for token in raw.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let matched = if let Some(i) = candidate_ids.iter().position(|id| id == token) {
            Some(i)
        } else if token.len() >= 7 {
            let mut hits = candidate_ids
                .iter()
                .enumerate()
                .filter(|(_, id)| id.starts_with(token))
                .map(|(i, _)| i);
            match (hits.next(), hits.next()) {
                (Some(i), None) => Some(i),
                _ => None,
            }
        } else {
            None
        };
        if let Some(i) = matched {
            if !used[i] {
                used[i] = true;
                order.push(i);
            }
        }
    }
    for (i, seen) in used.iter().enumerate() {
        if !seen {
            order.push(i);
        }
    }
    order.into_iter().map(|i| candidate_ids[i].clone()).collect()
}

/// Rerank a candidate batch with a chat model. On transport failure the
/// call is retried with backoff; if all attempts fail, the original
/// retrieval order is returned and the issue is flagged as a fallback.
///
/// Output scores are synthetic `1 / position` values encoding the order.
pub fn llm_rerank(
    client: &dyn ChatClient,
    batch: &RerankRequestBatch,
    retry: &RetryPolicy,
    message_char_budget: usize,
) -> (RankedList, RerankEvents) {
    let (prompt, truncated_messages) = render_rerank_prompt(batch, message_char_budget);
    let candidate_ids: Vec<String> = batch.candidates.iter().map(|(id, _)| id.clone()).collect();
    let mut events = RerankEvents {
        truncated_messages,
        ..RerankEvents::default()
    };

    let messages = [ChatMessage::user(prompt)];
    let ordered = match retry.run(|| client.complete(&messages)) {
        Ok(response) => parse_llm_order(&response, &candidate_ids),
        Err(e) => {
            log::warn!("issue {}: llm rerank failed, keeping retrieval order: {e}", batch.query_id);
            events.fallback = true;
            candidate_ids.clone()
        }
    };

    let entries: Vec<(String, f64)> = ordered
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, 1.0 / (i + 1) as f64))
        .collect();
    (
        RankedList::pre_ranked(&batch.query_id, "llm", entries),
        events,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn ids(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parse_short_ids_exact_match() {
        let candidates = ids(&["c1", "c2", "c3", "c4"]);
        assert_eq!(parse_llm_order("c3, c1, c2", &candidates), ids(&["c3", "c1", "c2", "c4"]));
    }

    #[test]
    fn parse_unknown_ids_ignored() {
        let candidates = ids(&["c1", "c2"]);
        assert_eq!(parse_llm_order("c9, c2, c8, c1", &candidates), ids(&["c2", "c1"]));
    }

    #[test]
    fn parse_full_permutation_is_identity_on_response_order() {
        let candidates = ids(&["c1", "c2", "c3"]);
        assert_eq!(parse_llm_order("c2\nc3\nc1", &candidates), ids(&["c2", "c3", "c1"]));
    }

    #[test]
    fn parse_empty_keeps_retrieval_order() {
        let candidates = ids(&["c1", "c2", "c3"]);
        assert_eq!(parse_llm_order("", &candidates), candidates);
    }

    #[test]
    fn parse_duplicates_first_position_wins() {
        let candidates = ids(&["c1", "c2"]);
        assert_eq!(parse_llm_order("c2 c2 c1 c2", &candidates), ids(&["c2", "c1"]));
    }

    #[test]
    fn parse_seven_char_prefixes() {
        let candidates = ids(&[
            "abc1234deadbeef00000000000000000000000000",
            "def5678deadbeef00000000000000000000000000",
            "aaa9999deadbeef00000000000000000000000000",
        ]);
        let got = parse_llm_order("1. abc1234\n2. def5678", &candidates);
        assert_eq!(got[0], candidates[0]);
        assert_eq!(got[1], candidates[1]);
        assert_eq!(got[2], candidates[2]);
    }

    #[test]
    fn parse_ambiguous_prefix_ignored() {
        let candidates = ids(&["abcdefg111", "abcdefg222"]);
        // "abcdefg" prefixes both candidates; too ambiguous to count.
        assert_eq!(parse_llm_order("abcdefg", &candidates), candidates);
    }

    #[test]
    fn parse_always_permutation_on_fuzz() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(99);
        let candidates = ids(&["aaaa1111", "bbbb2222", "cccc3333", "dddd4444"]);
        for _ in 0..500 {
            let len = rng.gen_range(0..200);
            let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let raw = String::from_utf8_lossy(&bytes);
            let mut got = parse_llm_order(&raw, &candidates);
            got.sort();
            let mut want = candidates.clone();
            want.sort();
            assert_eq!(got, want);
        }
    }

    struct StubChat {
        response: std::result::Result<String, String>,
        calls: AtomicUsize,
    }

    impl ChatClient for StubChat {
        fn complete(&self, _messages: &[ChatMessage]) -> Result<String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.response.clone().map_err(|m| crate::Error::Remote {
                attempts: 1,
                message: m,
            })
        }
    }

    fn batch() -> RerankRequestBatch {
        RerankRequestBatch {
            query_id: "K-1".into(),
            issue_text: "crash on start".into(),
            candidates: vec![
                ("c1".into(), "fix crash".into()),
                ("c2".into(), "docs".into()),
                ("c3".into(), "crash fix for start".into()),
            ],
        }
    }

    #[test]
    fn rerank_applies_response_order() {
        let client = StubChat {
            response: Ok("c3\nc1".into()),
            calls: AtomicUsize::new(0),
        };
        let (list, events) = llm_rerank(&client, &batch(), &RetryPolicy::none(), 1000);
        let got: Vec<&str> = list.doc_ids().collect();
        assert_eq!(got, ["c3", "c1", "c2"]);
        assert!(!events.fallback);
        assert!(list.entries[0].score > list.entries[1].score);
    }

    #[test]
    fn rerank_falls_back_to_retrieval_order_after_retries() {
        let client = StubChat {
            response: Err("connection refused".into()),
            calls: AtomicUsize::new(0),
        };
        let retry = RetryPolicy {
            attempts: 3,
            backoff: std::time::Duration::ZERO,
        };
        let (list, events) = llm_rerank(&client, &batch(), &retry, 1000);
        let got: Vec<&str> = list.doc_ids().collect();
        assert_eq!(got, ["c1", "c2", "c3"]);
        assert!(events.fallback);
        assert_eq!(client.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn prompt_truncates_and_counts_long_messages() {
        let mut b = batch();
        b.candidates[1].1 = "x".repeat(5000);
        let (prompt, truncated) = render_rerank_prompt(&b, 100);
        assert_eq!(truncated, 1);
        assert!(prompt.contains("id: c2"));
        assert!(!prompt.contains(&"x".repeat(101)));
        assert!(prompt.contains("Return only the ordered commit ids"));
    }
}
