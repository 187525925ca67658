//! Sparse lexical indexes: Okapi BM25 and BM25L.
//!
//! Both follow the reference formulations of the widely used `rank-bm25`
//! library: Okapi floors negative IDF values at `epsilon * average_idf`,
//! and BM25L scores with the shifted length-normalized term frequency
//! `(ctd + delta)`. Defaults are that library's: k1 = 1.5, b = 0.75,
//! epsilon = 0.25, delta = 0.5.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::Error;
use crate::Result;

use super::token::{tokenize, TokenStream};
use super::RankedList;

/// Which sparse scoring function an index uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SparseVariant {
    Bm25,
    Bm25l,
}

/// BM25-family parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseParams {
    pub k1: f64,
    pub b: f64,
    /// Okapi only: floor for negative IDF, as a fraction of the average IDF.
    pub epsilon: f64,
    /// BM25L only: shift added to the length-normalized term frequency.
    pub delta: f64,
}

impl Default for SparseParams {
    fn default() -> Self {
        SparseParams {
            k1: 1.5,
            b: 0.75,
            epsilon: 0.25,
            delta: 0.5,
        }
    }
}

/// Term statistics over one corpus (a per-issue candidate pool by default,
/// or a whole project under global scope).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparseIndex {
    variant: SparseVariant,
    params: SparseParams,
    doc_ids: Vec<String>,
    doc_len: Vec<usize>,
    term_freq: Vec<BTreeMap<String, u32>>,
    doc_freq: BTreeMap<String, u32>,
    avg_doc_len: f64,
    /// Per-term IDF under `variant`, with Okapi's epsilon floor applied.
    idf: BTreeMap<String, f64>,
}

/// Build term statistics for `docs`. Errors on an empty corpus.
pub fn build_sparse_index(
    docs: &[Document],
    variant: SparseVariant,
    params: SparseParams,
) -> Result<SparseIndex> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut doc_ids = Vec::with_capacity(docs.len());
    let mut doc_len = Vec::with_capacity(docs.len());
    let mut term_freq = Vec::with_capacity(docs.len());
    let mut doc_freq: BTreeMap<String, u32> = BTreeMap::new();

    for doc in docs {
        let tokens = tokenize(&doc.text);
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for token in tokens.iter() {
            *tf.entry(token.clone()).or_insert(0) += 1;
        }
        for term in tf.keys() {
            *doc_freq.entry(term.clone()).or_insert(0) += 1;
        }
        doc_ids.push(doc.doc_id.clone());
        doc_len.push(tokens.len());
        term_freq.push(tf);
    }

    let n = docs.len() as f64;
    let avg_doc_len = doc_len.iter().sum::<usize>() as f64 / n;
    let idf = match variant {
        SparseVariant::Bm25 => okapi_idf(&doc_freq, n, params.epsilon),
        SparseVariant::Bm25l => doc_freq
            .iter()
            .map(|(t, &df)| (t.clone(), ((n + 1.0) / (df as f64 + 0.5)).ln()))
            .collect(),
    };

    Ok(SparseIndex {
        variant,
        params,
        doc_ids,
        doc_len,
        term_freq,
        doc_freq,
        avg_doc_len,
        idf,
    })
}

/// Okapi IDF: `ln((N - df + 0.5) / (df + 0.5))`, with negative values
/// replaced by `epsilon * average_idf` (average over the raw values).
fn okapi_idf(doc_freq: &BTreeMap<String, u32>, n: f64, epsilon: f64) -> BTreeMap<String, f64> {
    let mut idf: BTreeMap<String, f64> = doc_freq
        .iter()
        .map(|(t, &df)| {
            let df = df as f64;
            (t.clone(), ((n - df + 0.5) / (df + 0.5)).ln())
        })
        .collect();
    let average = idf.values().sum::<f64>() / idf.len().max(1) as f64;
    let floor = epsilon * average;
    for value in idf.values_mut() {
        if *value < 0.0 {
            *value = floor;
        }
    }
    idf
}

impl SparseIndex {
    pub fn variant(&self) -> SparseVariant {
        self.variant
    }

    pub fn params(&self) -> &SparseParams {
        &self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_freq(&self, term: &str) -> u32 {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    /// Score one document against a query. Repeated query tokens contribute
    /// once per occurrence, mirroring the reference library.
    pub fn score(&self, doc_idx: usize, query: &TokenStream) -> f64 {
        let tf = &self.term_freq[doc_idx];
        let dl = self.doc_len[doc_idx] as f64;
        let norm_len = 1.0 - self.params.b + self.params.b * dl / self.avg_doc_len;
        let k1 = self.params.k1;
        let mut score = 0.0;
        for token in query.iter() {
            let Some(&idf) = self.idf.get(token) else {
                continue;
            };
            let freq = tf.get(token).copied().unwrap_or(0) as f64;
            score += match self.variant {
                SparseVariant::Bm25 => idf * freq * (k1 + 1.0) / (freq + k1 * norm_len),
                SparseVariant::Bm25l => {
                    let ctd = freq / norm_len;
                    let shifted = ctd + self.params.delta;
                    idf * (k1 + 1.0) * shifted / (k1 + shifted)
                }
            };
        }
        score
    }
}

/// Top-k documents by the index's scoring function. Zero-scored documents
/// appear only when needed to fill up to `k`; ties order by ascending
/// doc_id.
pub fn sparse_search(index: &SparseIndex, query: &TokenStream, k: usize, query_id: &str) -> RankedList {
    sparse_search_within(index, query, k, query_id, None)
}

/// Like [`sparse_search`] but restricted to an allowed doc-id set; used for
/// global-scope scoring where statistics come from the whole project and
/// candidates from one pool.
pub fn sparse_search_within(
    index: &SparseIndex,
    query: &TokenStream,
    k: usize,
    query_id: &str,
    allowed: Option<&HashSet<&str>>,
) -> RankedList {
    let scores: Vec<(String, f64)> = index
        .doc_ids
        .iter()
        .enumerate()
        .filter(|(_, id)| allowed.is_none_or(|a| a.contains(id.as_str())))
        .map(|(i, id)| (id.clone(), index.score(i, query)))
        .collect();
    RankedList::from_scores(query_id, index.provenance(), scores, k)
}

impl SparseIndex {
    fn provenance(&self) -> &'static str {
        match self.variant {
            SparseVariant::Bm25 => "bm25",
            SparseVariant::Bm25l => "bm25l",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            doc_id: id.into(),
            text: text.into(),
            token_count: tokenize(text).len(),
        }
    }

    fn build(docs: &[Document], variant: SparseVariant) -> SparseIndex {
        build_sparse_index(docs, variant, SparseParams::default()).unwrap()
    }

    #[test]
    fn statistics_examples() {
        let docs = vec![
            doc("d1", "alpha beta"),
            doc("d2", "gamma delta"),
            doc("d3", "alpha alpha"),
        ];
        let index = build(&docs, SparseVariant::Bm25);
        assert_eq!(index.doc_count(), 3);
        assert!((index.avg_doc_len() - 2.0).abs() < 1e-12);
        assert_eq!(index.doc_freq("alpha"), 2);

        let all = vec![doc("d1", "common x1"), doc("d2", "common x2"), doc("d3", "common x3")];
        let index = build(&all, SparseVariant::Bm25);
        assert_eq!(index.doc_freq("common") as usize, index.doc_count());
    }

    #[test]
    fn rebuild_is_deterministic() {
        let docs = vec![doc("d1", "alpha beta"), doc("d2", "beta gamma")];
        let a = build(&docs, SparseVariant::Bm25);
        let b = build(&docs, SparseVariant::Bm25);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(
            build_sparse_index(&[], SparseVariant::Bm25, SparseParams::default()),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn tf_monotone_at_equal_length() {
        let docs = vec![
            doc("d1", "alpha beta"),
            doc("d2", "gamma delta"),
            doc("d3", "alpha alpha"),
        ];
        let index = build(&docs, SparseVariant::Bm25);
        let out = sparse_search(&index, &tokenize("alpha"), 3, "q");
        assert_eq!(out.entries[0].doc_id, "d3");
        assert_eq!(out.entries[1].doc_id, "d1");
        assert_eq!(out.entries[2].doc_id, "d2");
        assert_eq!(out.entries[2].score, 0.0);
    }

    #[test]
    fn unknown_query_terms_score_zero() {
        let docs = vec![doc("d1", "alpha beta"), doc("d2", "gamma delta")];
        let index = build(&docs, SparseVariant::Bm25);
        let out = sparse_search(&index, &tokenize("zeta omega"), 2, "q");
        assert!(out.entries.iter().all(|e| e.score == 0.0));
    }

    // Direct per-document evaluation of the Okapi formula, independent of
    // the index's precomputed statistics.
    fn okapi_oracle(docs: &[Vec<&str>], query: &[&str], k1: f64, b: f64, epsilon: f64) -> Vec<f64> {
        let n = docs.len() as f64;
        let avgdl = docs.iter().map(|d| d.len()).sum::<usize>() as f64 / n;
        let mut vocab: Vec<&str> = docs.iter().flatten().copied().collect();
        vocab.sort_unstable();
        vocab.dedup();
        let idf_raw: Vec<(&str, f64)> = vocab
            .iter()
            .map(|t| {
                let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
                (*t, ((n - df + 0.5) / (df + 0.5)).ln())
            })
            .collect();
        let avg_idf = idf_raw.iter().map(|(_, v)| v).sum::<f64>() / idf_raw.len() as f64;
        let idf_of = |t: &str| -> f64 {
            idf_raw
                .iter()
                .find(|(term, _)| *term == t)
                .map(|(_, v)| if *v < 0.0 { epsilon * avg_idf } else { *v })
                .unwrap_or(0.0)
        };
        docs.iter()
            .map(|d| {
                let dl = d.len() as f64;
                query
                    .iter()
                    .map(|t| {
                        let tf = d.iter().filter(|w| *w == t).count() as f64;
                        idf_of(t) * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl))
                    })
                    .sum::<f64>()
            })
            .collect()
    }

    #[test]
    fn okapi_matches_hand_computation_on_five_docs() {
        let texts = [
            "kernel panic during boot",
            "panic handler rewrite panic",
            "docs typo fix",
            "boot loader panic message",
            "refactor kernel scheduler code",
        ];
        let docs: Vec<Document> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| doc(&format!("d{i}"), t))
            .collect();
        let index = build(&docs, SparseVariant::Bm25);
        let query = tokenize("kernel panic");
        let token_docs: Vec<Vec<&str>> = texts.iter().map(|t| t.split(' ').collect()).collect();
        let expected = okapi_oracle(&token_docs, &["kernel", "panic"], 1.5, 0.75, 0.25);
        for (i, want) in expected.iter().enumerate() {
            assert!(
                (index.score(i, &query) - want).abs() < 1e-12,
                "doc {i}: {} vs {want}",
                index.score(i, &query)
            );
        }
        let ranked = sparse_search(&index, &query, 5, "q");
        let mut by_oracle: Vec<usize> = (0..5).collect();
        by_oracle.sort_by(|&a, &b| expected[b].total_cmp(&expected[a]).then(a.cmp(&b)));
        let got: Vec<String> = ranked.entries.iter().map(|e| e.doc_id.clone()).collect();
        let want: Vec<String> = by_oracle.iter().map(|i| format!("d{i}")).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn bm25l_shift_scores_all_docs_for_known_terms() {
        let docs = vec![doc("d1", "alpha beta"), doc("d2", "gamma delta")];
        let index = build(&docs, SparseVariant::Bm25l);
        let out = sparse_search(&index, &tokenize("alpha"), 2, "q");
        // d2 lacks the term but still receives the delta-shifted contribution.
        assert!(out.entries[0].score > out.entries[1].score);
        assert!(out.entries[1].score > 0.0);
    }

    #[test]
    fn rarer_term_contributes_more() {
        // Same tf, equal doc lengths; "rare" appears in one doc, "common" in three.
        let docs = vec![
            doc("d1", "rare common zz1"),
            doc("d2", "common aa zz2"),
            doc("d3", "common bb zz3"),
            doc("d4", "cc dd zz4"),
        ];
        let index = build(&docs, SparseVariant::Bm25);
        let rare = index.score(0, &tokenize("rare"));
        let common = index.score(0, &tokenize("common"));
        assert!(rare > common);
    }

    proptest! {
        #[test]
        fn scores_match_direct_formula(
            corpus in proptest::collection::vec(
                proptest::collection::vec("[p-t]{2}", 1..8),
                1..12,
            ),
            query in proptest::collection::vec("[p-t]{2}", 1..4),
        ) {
            let docs: Vec<Document> = corpus
                .iter()
                .enumerate()
                .map(|(i, words)| doc(&format!("d{i:02}"), &words.join(" ")))
                .collect();
            let index = build(&docs, SparseVariant::Bm25);
            let token_docs: Vec<Vec<&str>> =
                corpus.iter().map(|w| w.iter().map(String::as_str).collect()).collect();
            let query_refs: Vec<&str> = query.iter().map(String::as_str).collect();
            let expected = okapi_oracle(&token_docs, &query_refs, 1.5, 0.75, 0.25);
            let stream = tokenize(&query.join(" "));
            for (i, want) in expected.iter().enumerate() {
                prop_assert!((index.score(i, &stream) - want).abs() < 1e-9);
            }
        }
    }
}
