//! TF-IDF vectors over a candidate pool's vocabulary.
//!
//! Weighting is raw term count times a smoothed IDF,
//! `ln((1 + N) / (1 + df)) + 1`, L2-normalized. The smoothing keeps every
//! pool term at a positive weight, so two identical texts always score
//! cosine 1.0 even when all their terms are corpus-wide.

use std::collections::BTreeMap;

use crate::retrieval::tokenize;

/// Vocabulary and document frequencies fitted on one pool's documents.
/// Terms outside the pool vocabulary are dropped when vectorizing.
#[derive(Debug, Clone)]
pub struct TfIdfSpace {
    n_docs: usize,
    doc_freq: BTreeMap<String, u32>,
}

impl TfIdfSpace {
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut n_docs = 0usize;
        let mut doc_freq: BTreeMap<String, u32> = BTreeMap::new();
        for text in texts {
            n_docs += 1;
            let mut seen: Vec<String> = tokenize(text).into_vec();
            seen.sort_unstable();
            seen.dedup();
            for term in seen {
                *doc_freq.entry(term).or_insert(0) += 1;
            }
        }
        TfIdfSpace { n_docs, doc_freq }
    }

    pub fn doc_freq(&self, term: &str) -> u32 {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    fn idf(&self, term: &str) -> Option<f64> {
        let df = *self.doc_freq.get(term)? as f64;
        Some(((1.0 + self.n_docs as f64) / (1.0 + df)).ln() + 1.0)
    }

    /// L2-normalized tf-idf vector; empty when no in-vocabulary term occurs.
    pub fn vector(&self, text: &str) -> BTreeMap<String, f64> {
        let mut tf: BTreeMap<&str, f64> = BTreeMap::new();
        let tokens = tokenize(text);
        for token in tokens.iter() {
            *tf.entry(token.as_str()).or_insert(0.0) += 1.0;
        }
        let mut v: BTreeMap<String, f64> = tf
            .into_iter()
            .filter_map(|(term, count)| self.idf(term).map(|idf| (term.to_string(), count * idf)))
            .collect();
        let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for value in v.values_mut() {
                *value /= norm;
            }
        }
        v
    }

    /// Cosine similarity of two texts in this space; 0 when either vector
    /// is empty.
    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        sparse_dot(&self.vector(a), &self.vector(b))
    }
}

fn sparse_dot(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small
        .iter()
        .filter_map(|(term, x)| large.get(term).map(|y| x * y))
        .sum()
}
