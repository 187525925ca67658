//! A from-scratch random forest over the fixed feature schema: CART trees
//! with Gini impurity, bootstrap sampling, and per-split feature
//! subsampling. Leaves store the positive-class fraction, so forest scores
//! are vote fractions in [0, 1].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::util::par_map;
use crate::Result;

use super::features::{FeatureVector, FEATURE_COUNT, FEATURE_SCHEMA_VERSION};

/// Forest hyperparameters. Defaults: 100 trees, unlimited depth,
/// min_samples_leaf 1, ceil(sqrt(schema)) features per split, seeded
/// bootstrap sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features considered per split; defaults to ceil(sqrt(FEATURE_COUNT)).
    pub features_per_split: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: None,
            seed: 0,
        }
    }
}

impl ForestParams {
    fn effective_features_per_split(&self) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (FEATURE_COUNT as f64).sqrt().ceil() as usize)
            .clamp(1, FEATURE_COUNT)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum TreeNode {
    Split {
        feature: usize,
        /// Left branch takes values <= threshold.
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        positive_fraction: f64,
    },
}

/// One axis-aligned decision tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
}

impl DecisionTree {
    fn score(&self, values: &[f64; FEATURE_COUNT]) -> f64 {
        let mut node = 0usize;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { positive_fraction } => return *positive_fraction,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if values[*feature] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }
}

/// A trained, immutable forest. Safe for concurrent scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub params: ForestParams,
    pub feature_schema_version: u32,
    /// Forest accuracy on its own training set at a 0.5 vote threshold.
    pub in_bag_accuracy: f64,
}

/// Train a seeded forest. Both classes must be present; training is
/// deterministic for a given seed and example order.
pub fn train_forest(examples: &[FeatureVector], params: ForestParams) -> Result<ForestModel> {
    let labeled: Vec<(&[f64; FEATURE_COUNT], bool)> = examples
        .iter()
        .filter_map(|fv| fv.label.map(|l| (&fv.values, l)))
        .collect();
    if labeled.is_empty() || labeled.iter().all(|(_, l)| *l) {
        return Err(Error::SingleClass("positives"));
    }
    if labeled.iter().all(|(_, l)| !*l) {
        return Err(Error::SingleClass("negatives"));
    }
    for (values, _) in &labeled {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Train("non-finite feature value in training set".into()));
        }
    }

    let trees = par_map((0..params.n_trees.max(1)).collect(), |t| {
        let mut rng = ChaCha20Rng::seed_from_u64(params.seed.wrapping_add(t as u64));
        grow_tree(&labeled, &params, &mut rng)
    });

    let mut model = ForestModel {
        trees,
        params,
        feature_schema_version: FEATURE_SCHEMA_VERSION,
        in_bag_accuracy: 0.0,
    };
    let correct = labeled
        .iter()
        .filter(|(values, label)| (model_score(&model, values) >= 0.5) == *label)
        .count();
    model.in_bag_accuracy = correct as f64 / labeled.len() as f64;
    log::info!(
        "forest: {} trees, {} examples, in-bag accuracy {:.4}",
        model.trees.len(),
        labeled.len(),
        model.in_bag_accuracy
    );
    Ok(model)
}

fn model_score(model: &ForestModel, values: &[f64; FEATURE_COUNT]) -> f64 {
    let sum: f64 = model.trees.iter().map(|t| t.score(values)).sum();
    sum / model.trees.len() as f64
}

/// Mean of per-tree leaf positive-fractions; errors if the feature schema
/// does not match the model's.
pub fn score_forest(model: &ForestModel, features: &FeatureVector) -> Result<f64> {
    if model.feature_schema_version != FEATURE_SCHEMA_VERSION {
        return Err(Error::SchemaMismatch {
            model: model.feature_schema_version,
            input: FEATURE_SCHEMA_VERSION,
        });
    }
    Ok(model_score(model, &features.values))
}

fn grow_tree(
    data: &[(&[f64; FEATURE_COUNT], bool)],
    params: &ForestParams,
    rng: &mut ChaCha20Rng,
) -> DecisionTree {
    // Bootstrap sample, n draws with replacement.
    let sample: Vec<usize> = (0..data.len()).map(|_| rng.gen_range(0..data.len())).collect();
    let mut tree = DecisionTree { nodes: Vec::new() };
    build_node(&mut tree, data, sample, params, 0, rng);
    tree
}

fn gini(positives: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = positives as f64 / total as f64;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

fn build_node(
    tree: &mut DecisionTree,
    data: &[(&[f64; FEATURE_COUNT], bool)],
    indices: Vec<usize>,
    params: &ForestParams,
    depth: usize,
    rng: &mut ChaCha20Rng,
) -> u32 {
    let total = indices.len();
    let positives = indices.iter().filter(|&&i| data[i].1).count();
    let node_id = tree.nodes.len() as u32;
    let as_leaf = |tree: &mut DecisionTree| {
        tree.nodes.push(TreeNode::Leaf {
            positive_fraction: positives as f64 / total.max(1) as f64,
        });
        node_id
    };

    let depth_reached = params.max_depth.is_some_and(|d| depth >= d);
    if positives == 0 || positives == total || total < 2 * params.min_samples_leaf || depth_reached
    {
        return as_leaf(tree);
    }

    // Feature subset for this split: a seeded partial Fisher-Yates draw,
    // examined in ascending order so ties resolve deterministically.
    let m = params.effective_features_per_split();
    let mut pool: Vec<usize> = (0..FEATURE_COUNT).collect();
    for i in 0..m {
        let j = rng.gen_range(i..FEATURE_COUNT);
        pool.swap(i, j);
    }
    let mut chosen = pool[..m].to_vec();
    chosen.sort_unstable();

    let parent_gini = gini(positives, total);
    let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
    for &feature in &chosen {
        let mut values: Vec<(f64, bool)> = indices
            .iter()
            .map(|&i| (data[i].0[feature], data[i].1))
            .collect();
        values.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut left_pos = 0usize;
        let mut left_total = 0usize;
        for w in 0..values.len() - 1 {
            left_total += 1;
            if values[w].1 {
                left_pos += 1;
            }
            if values[w].0 == values[w + 1].0 {
                continue;
            }
            let right_total = total - left_total;
            if left_total < params.min_samples_leaf || right_total < params.min_samples_leaf {
                continue;
            }
            let right_pos = positives - left_pos;
            let weighted = (left_total as f64 * gini(left_pos, left_total)
                + right_total as f64 * gini(right_pos, right_total))
                / total as f64;
            let gain = parent_gini - weighted;
            if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                let threshold = values[w].0 + (values[w + 1].0 - values[w].0) / 2.0;
                best = Some((gain, feature, threshold));
            }
        }
    }

    let Some((_, feature, threshold)) = best else {
        return as_leaf(tree);
    };

    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .into_iter()
        .partition(|&i| data[i].0[feature] <= threshold);
    tree.nodes.push(TreeNode::Leaf {
        positive_fraction: 0.0, // placeholder, replaced below
    });
    let left = build_node(tree, data, left_idx, params, depth + 1, rng);
    let right = build_node(tree, data, right_idx, params, depth + 1, rng);
    tree.nodes[node_id as usize] = TreeNode::Split {
        feature,
        threshold,
        left,
        right,
    };
    node_id
}
