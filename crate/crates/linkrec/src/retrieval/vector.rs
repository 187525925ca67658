//! Dense vector indexes over unit embeddings: exact flat search plus three
//! approximate structures (HNSW graph, signed-hyperplane LSH, random
//! projection forest).
//!
//! All construction is seeded and single-writer; a built index is immutable
//! and safe to query concurrently. Scores are cosine similarities (inner
//! products of unit vectors) accumulated in f64.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

use super::embed::{dot, l2_norm};
use super::RankedList;

/// Index structure kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorKind {
    /// Exact exhaustive cosine scan.
    Flat,
    /// Multi-layer navigable small-world graph.
    Hnsw,
    /// Signed random hyperplane signatures ranked by Hamming distance.
    Lsh,
    /// Random projection trees with a shared candidate budget.
    RpForest,
}

impl VectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VectorKind::Flat => "flat",
            VectorKind::Hnsw => "hnsw",
            VectorKind::Lsh => "lsh",
            VectorKind::RpForest => "rp_forest",
        }
    }
}

/// Construction and search parameters for the approximate kinds. The paper
/// names the structures but none of these knobs; defaults follow common
/// library practice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VectorParams {
    pub seed: u64,
    pub hnsw_m: usize,
    pub hnsw_ef_construction: usize,
    pub hnsw_ef_search: usize,
    pub lsh_nbits: usize,
    pub rp_trees: usize,
    pub rp_leaf_size: usize,
    /// Candidate budget multiplier: budget = factor * k * rp_trees.
    pub rp_candidate_factor: usize,
}

impl Default for VectorParams {
    fn default() -> Self {
        VectorParams {
            seed: 0,
            hnsw_m: 16,
            hnsw_ef_construction: 200,
            hnsw_ef_search: 100,
            lsh_nbits: 256,
            rp_trees: 50,
            rp_leaf_size: 16,
            rp_candidate_factor: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Structure {
    Flat,
    Hnsw(HnswGraph),
    Lsh(LshTable),
    RpForest(RpForest),
}

/// A built dense index: the stored unit vectors plus a kind-specific search
/// structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VectorIndex {
    kind: VectorKind,
    dim: usize,
    params: VectorParams,
    ids: Vec<String>,
    vectors: Vec<Vec<f32>>,
    structure: Structure,
}

/// Validate the vectors (equal dim, unit norm within 1e-6, non-empty) and
/// build the requested structure over them.
pub fn build_vector_index(
    entries: Vec<(String, Vec<f32>)>,
    kind: VectorKind,
    params: VectorParams,
) -> Result<VectorIndex> {
    if entries.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let dim = entries[0].1.len();
    for (id, v) in &entries {
        if v.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        let norm = l2_norm(v);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::NotUnitNorm {
                doc_id: id.clone(),
                norm,
            });
        }
    }
    let (ids, vectors): (Vec<String>, Vec<Vec<f32>>) = entries.into_iter().unzip();
    let structure = match kind {
        VectorKind::Flat => Structure::Flat,
        VectorKind::Hnsw => Structure::Hnsw(HnswGraph::build(&vectors, &params)),
        VectorKind::Lsh => Structure::Lsh(LshTable::build(&vectors, dim, &params)),
        VectorKind::RpForest => Structure::RpForest(RpForest::build(&vectors, &params)),
    };
    Ok(VectorIndex {
        kind,
        dim,
        params,
        ids,
        vectors,
        structure,
    })
}

impl VectorIndex {
    pub fn kind(&self) -> VectorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Top-k by cosine similarity. Flat search is exact; HNSW and the RP forest
/// expand a candidate set and score it exactly; LSH ranks by Hamming
/// distance over signatures with exact-cosine tie-breaking.
pub fn vector_search(index: &VectorIndex, query: &[f32], k: usize, query_id: &str) -> Result<RankedList> {
    if query.len() != index.dim {
        return Err(Error::DimMismatch {
            expected: index.dim,
            got: query.len(),
        });
    }
    let provenance = index.kind.as_str();
    let list = match &index.structure {
        Structure::Flat => {
            let scores = score_subset(index, query, 0..index.len());
            RankedList::from_scores(query_id, provenance, scores, k)
        }
        Structure::Hnsw(graph) => {
            let ef = index.params.hnsw_ef_search.max(k);
            let candidates = graph.search(&index.vectors, query, ef);
            let scores = candidates
                .into_iter()
                .map(|s| (index.ids[s.id as usize].clone(), s.sim))
                .collect();
            RankedList::from_scores(query_id, provenance, scores, k)
        }
        Structure::Lsh(table) => table.search(index, query, k, query_id),
        Structure::RpForest(forest) => {
            let budget = index
                .params
                .rp_candidate_factor
                .saturating_mul(k.max(1))
                .saturating_mul(index.params.rp_trees.max(1))
                .min(index.len());
            let candidates = forest.candidates(query, budget);
            let scores = candidates
                .into_iter()
                .map(|i| (index.ids[i as usize].clone(), dot(query, &index.vectors[i as usize])))
                .collect();
            RankedList::from_scores(query_id, provenance, scores, k)
        }
    };
    Ok(list)
}

/// Exact cosine ranking restricted to an allowed id set; only meaningful for
/// flat indexes, where it supports global-scope scoring.
pub fn flat_search_within(
    index: &VectorIndex,
    query: &[f32],
    k: usize,
    query_id: &str,
    allowed: &HashSet<&str>,
) -> Result<RankedList> {
    if query.len() != index.dim {
        return Err(Error::DimMismatch {
            expected: index.dim,
            got: query.len(),
        });
    }
    let scores: Vec<(String, f64)> = (0..index.len())
        .filter(|&i| allowed.contains(index.ids[i].as_str()))
        .map(|i| (index.ids[i].clone(), dot(query, &index.vectors[i])))
        .collect();
    Ok(RankedList::from_scores(query_id, "flat", scores, k))
}

fn score_subset(
    index: &VectorIndex,
    query: &[f32],
    range: std::ops::Range<usize>,
) -> Vec<(String, f64)> {
    range
        .map(|i| (index.ids[i].clone(), dot(query, &index.vectors[i])))
        .collect()
}

// ---------------------------------------------------------------------------
// Shared ordered (similarity, id) pair for heaps.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    sim: f64,
    id: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    // Greater = more similar; ties prefer the smaller id so heap pops are
    // fully deterministic.
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// ---------------------------------------------------------------------------
// HNSW
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HnswGraph {
    entry: u32,
    max_level: usize,
    /// neighbors[node][level] -> adjacent node ids.
    neighbors: Vec<Vec<Vec<u32>>>,
}

impl HnswGraph {
    fn build(vectors: &[Vec<f32>], params: &VectorParams) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
        let m = params.hnsw_m.max(2);
        let ml = 1.0 / (m as f64).ln();
        let mut graph = HnswGraph {
            entry: 0,
            max_level: 0,
            neighbors: Vec::with_capacity(vectors.len()),
        };
        for (i, vector) in vectors.iter().enumerate() {
            let level = sample_level(&mut rng, ml);
            graph.insert(vectors, i as u32, vector, level, m, params.hnsw_ef_construction);
        }
        graph
    }

    fn insert(
        &mut self,
        vectors: &[Vec<f32>],
        id: u32,
        vector: &[f32],
        level: usize,
        m: usize,
        ef_construction: usize,
    ) {
        self.neighbors.push(vec![Vec::new(); level + 1]);
        if id == 0 {
            self.entry = 0;
            self.max_level = level;
            return;
        }

        let mut ep = self.entry;
        for l in ((level + 1)..=self.max_level).rev() {
            ep = self.greedy_closest(vectors, vector, ep, l);
        }

        for l in (0..=level.min(self.max_level)).rev() {
            let candidates = self.search_layer(vectors, vector, &[ep], ef_construction.max(m), l);
            let selected = select_diverse_neighbors(vectors, &candidates, m);
            for &neighbor in &selected {
                self.neighbors[id as usize][l].push(neighbor);
                self.neighbors[neighbor as usize][l].push(id);
                self.prune(vectors, neighbor, l, m);
            }
            if let Some(best) = candidates.first() {
                ep = best.id;
            }
        }

        if level > self.max_level {
            self.max_level = level;
            self.entry = id;
        }
    }

    /// Trim an overflowing neighbor list to m_max (2m at layer 0) with the
    /// diversity heuristic, so clusters stay mutually reachable.
    fn prune(&mut self, vectors: &[Vec<f32>], node: u32, level: usize, m: usize) {
        let m_max = if level == 0 { 2 * m } else { m };
        let list = &self.neighbors[node as usize][level];
        if list.len() <= m_max {
            return;
        }
        let base = &vectors[node as usize];
        let mut scored: Vec<Scored> = list
            .iter()
            .map(|&n| Scored {
                sim: dot(base, &vectors[n as usize]),
                id: n,
            })
            .collect();
        scored.sort_by(|a, b| b.cmp(a));
        self.neighbors[node as usize][level] = select_diverse_neighbors(vectors, &scored, m_max);
    }

    fn greedy_closest(&self, vectors: &[Vec<f32>], query: &[f32], entry: u32, level: usize) -> u32 {
        let mut current = entry;
        let mut best = dot(query, &vectors[current as usize]);
        loop {
            let mut improved = false;
            for &n in &self.neighbors[current as usize][level] {
                let sim = dot(query, &vectors[n as usize]);
                if sim > best {
                    best = sim;
                    current = n;
                    improved = true;
                }
            }
            if !improved {
                return current;
            }
        }
    }

    /// Best-first beam search at one level; returns up to `ef` results
    /// sorted by similarity descending.
    fn search_layer(
        &self,
        vectors: &[Vec<f32>],
        query: &[f32],
        entries: &[u32],
        ef: usize,
        level: usize,
    ) -> Vec<Scored> {
        let mut visited: HashSet<u32> = HashSet::new();
        let mut frontier: BinaryHeap<Scored> = BinaryHeap::new();
        let mut results: BinaryHeap<std::cmp::Reverse<Scored>> = BinaryHeap::new();

        for &ep in entries {
            if visited.insert(ep) {
                let s = Scored {
                    sim: dot(query, &vectors[ep as usize]),
                    id: ep,
                };
                frontier.push(s);
                results.push(std::cmp::Reverse(s));
            }
        }

        while let Some(current) = frontier.pop() {
            let worst = results.peek().map(|r| r.0.sim).unwrap_or(f64::NEG_INFINITY);
            if results.len() >= ef && current.sim < worst {
                break;
            }
            let level_lists = &self.neighbors[current.id as usize];
            if level >= level_lists.len() {
                continue;
            }
            for &n in &level_lists[level] {
                if !visited.insert(n) {
                    continue;
                }
                let sim = dot(query, &vectors[n as usize]);
                let worst = results.peek().map(|r| r.0.sim).unwrap_or(f64::NEG_INFINITY);
                if results.len() < ef || sim > worst {
                    let s = Scored { sim, id: n };
                    frontier.push(s);
                    results.push(std::cmp::Reverse(s));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }

        let mut out: Vec<Scored> = results.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    fn search(&self, vectors: &[Vec<f32>], query: &[f32], ef: usize) -> Vec<Scored> {
        let mut ep = self.entry;
        for l in (1..=self.max_level).rev() {
            ep = self.greedy_closest(vectors, query, ep, l);
        }
        let beam = self.search_layer(vectors, query, &[ep], ef, 0);

        // Candidate expansion: the beam's layer-0 neighborhoods hold most
        // of the near-ties the beam itself clipped; score them all exactly
        // before the final cut.
        let mut seen: HashSet<u32> = beam.iter().map(|s| s.id).collect();
        let mut candidates = beam;
        let beam_ids: Vec<u32> = candidates.iter().map(|s| s.id).collect();
        for id in beam_ids {
            for &n in &self.neighbors[id as usize][0] {
                if seen.insert(n) {
                    candidates.push(Scored {
                        sim: dot(query, &vectors[n as usize]),
                        id: n,
                    });
                }
            }
        }
        candidates.sort_by(|a, b| b.cmp(a));
        candidates
    }
}

/// Neighbor selection heuristic: walk candidates by decreasing similarity
/// to the base point and keep one only if it is closer to the base than to
/// every neighbor already kept. Plain take-the-nearest collapses all edges
/// into the local cluster and the graph loses its long-range links;
/// discarded candidates refill any remaining slots.
fn select_diverse_neighbors(vectors: &[Vec<f32>], candidates: &[Scored], m: usize) -> Vec<u32> {
    let mut selected: Vec<Scored> = Vec::with_capacity(m);
    let mut discarded: Vec<u32> = Vec::new();
    for cand in candidates {
        if selected.len() >= m {
            break;
        }
        let diverse = selected.iter().all(|kept| {
            cand.sim > dot(&vectors[cand.id as usize], &vectors[kept.id as usize])
        });
        if diverse {
            selected.push(*cand);
        } else {
            discarded.push(cand.id);
        }
    }
    let mut out: Vec<u32> = selected.into_iter().map(|s| s.id).collect();
    for id in discarded {
        if out.len() >= m {
            break;
        }
        out.push(id);
    }
    out
}

fn sample_level(rng: &mut ChaCha20Rng, ml: f64) -> usize {
    let u: f64 = rng.gen();
    // 1 - u is in (0, 1], so the log is finite.
    ((-(1.0 - u).ln()) * ml).floor().min(16.0) as usize
}

// ---------------------------------------------------------------------------
// LSH
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LshTable {
    nbits: usize,
    /// nbits hyperplane normals drawn from a seeded standard Gaussian.
    hyperplanes: Vec<Vec<f32>>,
    /// One packed signature (ceil(nbits/64) words) per document.
    signatures: Vec<Vec<u64>>,
}

impl LshTable {
    fn build(vectors: &[Vec<f32>], dim: usize, params: &VectorParams) -> Self {
        let nbits = params.lsh_nbits.max(1);
        let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
        let hyperplanes: Vec<Vec<f32>> = (0..nbits)
            .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect())
            .collect();
        let mut table = LshTable {
            nbits,
            hyperplanes,
            signatures: Vec::with_capacity(vectors.len()),
        };
        table.signatures = vectors.iter().map(|v| table.signature(v)).collect();
        table
    }

    fn signature(&self, v: &[f32]) -> Vec<u64> {
        let words = self.nbits.div_ceil(64);
        let mut sig = vec![0u64; words];
        for (bit, plane) in self.hyperplanes.iter().enumerate() {
            if dot(v, plane) >= 0.0 {
                sig[bit / 64] |= 1 << (bit % 64);
            }
        }
        sig
    }

    /// Rank by Hamming distance ascending; equal-distance groups order by
    /// exact cosine descending, then doc_id. The reported score is the
    /// signature agreement `(nbits - hamming) / nbits`.
    fn search(&self, index: &VectorIndex, query: &[f32], k: usize, query_id: &str) -> RankedList {
        let qsig = self.signature(query);
        let mut by_distance: Vec<(u32, u32)> = self
            .signatures
            .iter()
            .enumerate()
            .map(|(i, sig)| (hamming(&qsig, sig), i as u32))
            .collect();
        by_distance.sort_unstable();

        let mut entries: Vec<(String, f64)> = Vec::with_capacity(k.min(index.len()));
        let mut ordered: Vec<(String, f64)> = Vec::with_capacity(k.min(index.len()));
        let mut i = 0;
        while i < by_distance.len() && ordered.len() < k {
            let distance = by_distance[i].0;
            let mut group: Vec<(f64, &str)> = Vec::new();
            while i < by_distance.len() && by_distance[i].0 == distance {
                let idx = by_distance[i].1 as usize;
                group.push((dot(query, &index.vectors[idx]), index.ids[idx].as_str()));
                i += 1;
            }
            group.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
            let score = (self.nbits as f64 - distance as f64) / self.nbits as f64;
            for (_, id) in group {
                if ordered.len() >= k {
                    break;
                }
                ordered.push((id.to_string(), score));
            }
        }
        entries.extend(ordered);
        RankedList::pre_ranked(query_id, "lsh", entries)
    }
}

fn hamming(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

// ---------------------------------------------------------------------------
// Random projection forest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
enum RpNode {
    Split {
        normal: Vec<f32>,
        offset: f32,
        left: u32,
        right: u32,
    },
    Leaf(Vec<u32>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RpForest {
    roots: Vec<u32>,
    nodes: Vec<RpNode>,
}

impl RpForest {
    fn build(vectors: &[Vec<f32>], params: &VectorParams) -> Self {
        let mut forest = RpForest {
            roots: Vec::with_capacity(params.rp_trees),
            nodes: Vec::new(),
        };
        for tree in 0..params.rp_trees.max(1) {
            let mut rng = ChaCha20Rng::seed_from_u64(params.seed.wrapping_add(tree as u64 + 1));
            let items: Vec<u32> = (0..vectors.len() as u32).collect();
            let root = forest.split(vectors, items, params.rp_leaf_size.max(1), 0, &mut rng);
            forest.roots.push(root);
        }
        forest
    }

    fn split(
        &mut self,
        vectors: &[Vec<f32>],
        items: Vec<u32>,
        leaf_size: usize,
        depth: usize,
        rng: &mut ChaCha20Rng,
    ) -> u32 {
        if items.len() <= leaf_size || depth >= 48 {
            return self.push(RpNode::Leaf(items));
        }
        // ANNOY-style split: hyperplane equidistant from two random points.
        for _ in 0..5 {
            let a = items[rng.gen_range(0..items.len())] as usize;
            let b = items[rng.gen_range(0..items.len())] as usize;
            if a == b {
                continue;
            }
            let mut normal: Vec<f32> = vectors[a]
                .iter()
                .zip(&vectors[b])
                .map(|(x, y)| x - y)
                .collect();
            let norm = l2_norm(&normal);
            if norm < 1e-9 {
                continue;
            }
            for x in normal.iter_mut() {
                *x = (*x as f64 / norm) as f32;
            }
            let midpoint: Vec<f32> = vectors[a]
                .iter()
                .zip(&vectors[b])
                .map(|(x, y)| (x + y) / 2.0)
                .collect();
            let offset = dot(&normal, &midpoint) as f32;

            let (left, right): (Vec<u32>, Vec<u32>) = items
                .iter()
                .partition(|&&i| dot(&normal, &vectors[i as usize]) < offset as f64);
            if left.is_empty() || right.is_empty() {
                continue;
            }
            let left_node = self.split(vectors, left, leaf_size, depth + 1, rng);
            let right_node = self.split(vectors, right, leaf_size, depth + 1, rng);
            return self.push(RpNode::Split {
                normal,
                offset,
                left: left_node,
                right: right_node,
            });
        }
        self.push(RpNode::Leaf(items))
    }

    fn push(&mut self, node: RpNode) -> u32 {
        self.nodes.push(node);
        (self.nodes.len() - 1) as u32
    }

    /// Walk all trees with a shared priority queue on split margins until
    /// the candidate budget is met.
    fn candidates(&self, query: &[f32], budget: usize) -> Vec<u32> {
        let mut heap: BinaryHeap<(Scored, u32)> = BinaryHeap::new();
        for &root in &self.roots {
            heap.push((
                Scored {
                    sim: f64::INFINITY,
                    id: root,
                },
                root,
            ));
        }
        let mut seen: HashSet<u32> = HashSet::new();
        let mut out: Vec<u32> = Vec::new();
        while out.len() < budget {
            let Some((priority, node)) = heap.pop() else {
                break;
            };
            match &self.nodes[node as usize] {
                RpNode::Leaf(items) => {
                    for &i in items {
                        if seen.insert(i) {
                            out.push(i);
                        }
                    }
                }
                RpNode::Split {
                    normal,
                    offset,
                    left,
                    right,
                } => {
                    let margin = dot(normal, query) - *offset as f64;
                    let (near, far) = if margin < 0.0 {
                        (*left, *right)
                    } else {
                        (*right, *left)
                    };
                    heap.push((
                        Scored {
                            sim: priority.sim,
                            id: near,
                        },
                        near,
                    ));
                    heap.push((
                        Scored {
                            sim: priority.sim.min(margin.abs()),
                            id: far,
                        },
                        far,
                    ));
                }
            }
        }
        out
    }
}
