//! Bagged CART regression trees.
//!
//! Trees are grown with variance-reduction splits on presorted feature
//! orders: the bootstrap sample is sorted once per feature and every split
//! stably partitions those orders, so a level of the tree costs
//! `O(n · features)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Features examined per split; `None` examines all.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_split: 2,
            max_features: None,
        }
    }
}

/// Flattened tree node. Leaves have `feature == u32::MAX`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub value: f64,
}

impl TreeNode {
    fn leaf(value: f64) -> Self {
        TreeNode {
            feature: LEAF,
            threshold: 0.0,
            left: 0,
            right: 0,
            value,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    /// A tree that predicts `value` everywhere.
    pub fn constant(value: f64) -> Self {
        RegressionTree {
            nodes: vec![TreeNode::leaf(value)],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = &self.nodes[0];
        while !node.is_leaf() {
            node = if x[node.feature as usize] <= node.threshold {
                &self.nodes[node.left as usize]
            } else {
                &self.nodes[node.right as usize]
            };
        }
        node.value
    }

    pub fn leaves(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter(|n| n.is_leaf()).map(|n| n.value)
    }
}

/// Column-major design matrix.
#[derive(Debug, Clone)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    rows: usize,
}

impl Dataset {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if width == 0 {
            return Err(Error::InsufficientData(
                "dataset has no rows or no features".into(),
            ));
        }
        let mut columns = vec![Vec::with_capacity(rows.len()); width];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::invalid(
                    "dataset",
                    format!("row {r} has {} features, expected {width}", row.len()),
                ));
            }
            for (col, &v) in columns.iter_mut().zip(row) {
                if !v.is_finite() {
                    return Err(Error::invalid(
                        "dataset",
                        format!("row {r} contains a non-finite feature"),
                    ));
                }
                col.push(v);
            }
        }
        Ok(Dataset {
            columns,
            rows: rows.len(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn features(&self) -> usize {
        self.columns.len()
    }
}

/// Feature orders of one bootstrap sample, shared by every target fitted on it.
struct Presorted {
    /// Dataset row behind each slot of the sample.
    rows: Vec<u32>,
    /// Per feature, slots sorted by feature value (stable in slot order).
    orders: Vec<Vec<u32>>,
}

impl Presorted {
    fn new(data: &Dataset, rows: Vec<u32>) -> Self {
        let orders = data
            .columns
            .iter()
            .map(|col| {
                let mut order: Vec<u32> = (0..rows.len() as u32).collect();
                order.sort_by(|&a, &b| {
                    col[rows[a as usize] as usize].total_cmp(&col[rows[b as usize] as usize])
                });
                order
            })
            .collect();
        Presorted { rows, orders }
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    /// Samples going left.
    left_count: usize,
}

struct Grower<'a> {
    data: &'a Dataset,
    targets: &'a [f64],
    params: TreeParams,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
    orders: Vec<Vec<u32>>,
    rows: &'a [u32],
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
}

impl Grower<'_> {
    fn value(&self, slot: u32) -> f64 {
        self.targets[self.rows[slot as usize] as usize]
    }

    fn feature(&self, f: usize, slot: u32) -> f64 {
        self.data.columns[f][self.rows[slot as usize] as usize]
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let all = self.data.features();
        match self.params.max_features {
            Some(k) if k < all => {
                let mut feats: Vec<usize> = (0..all).collect();
                for i in 0..k {
                    let j = self.rng.random_range(i..all);
                    feats.swap(i, j);
                }
                feats.truncate(k);
                feats.sort_unstable();
                feats
            }
            _ => (0..all).collect(),
        }
    }

    fn best_split(&mut self, start: usize, end: usize, sum: f64) -> Option<Split> {
        let n = (end - start) as f64;
        let parent_score = sum * sum / n;
        let mut best: Option<(f64, Split)> = None;
        for f in self.candidate_features() {
            let order = &self.orders[f][start..end];
            let mut left_sum = 0.0;
            for k in 0..order.len() - 1 {
                left_sum += self.value(order[k]);
                let here = self.feature(f, order[k]);
                let next = self.feature(f, order[k + 1]);
                if here == next {
                    continue;
                }
                let nl = (k + 1) as f64;
                let right_sum = sum - left_sum;
                let score = left_sum * left_sum / nl + right_sum * right_sum / (n - nl);
                // Relative guard against splits that only shuffle rounding error.
                if score <= parent_score * (1.0 + 1e-12) {
                    continue;
                }
                if best.as_ref().is_none_or(|(s, _)| score > *s) {
                    let mut threshold = here + (next - here) / 2.0;
                    if threshold >= next {
                        threshold = here;
                    }
                    best = Some((
                        score,
                        Split {
                            feature: f,
                            threshold,
                            left_count: k + 1,
                        },
                    ));
                }
            }
        }
        best.map(|(_, s)| s)
    }

    fn partition(&mut self, start: usize, end: usize, split: &Split) {
        for &slot in &self.orders[split.feature][start..end] {
            self.goes_left[slot as usize] = false;
        }
        for &slot in &self.orders[split.feature][start..start + split.left_count] {
            self.goes_left[slot as usize] = true;
        }
        for f in 0..self.orders.len() {
            if f == split.feature {
                continue;
            }
            self.scratch.clear();
            let order = &mut self.orders[f];
            let mut write = start;
            for k in start..end {
                let slot = order[k];
                if self.goes_left[slot as usize] {
                    order[write] = slot;
                    write += 1;
                } else {
                    self.scratch.push(slot);
                }
            }
            order[write..end].copy_from_slice(&self.scratch);
        }
    }

    fn grow(mut self) -> RegressionTree {
        let n = self.rows.len();
        // (node index, start, end, depth)
        let mut stack = vec![(0usize, 0usize, n, 0usize)];
        self.nodes.push(TreeNode::leaf(0.0));
        while let Some((node, start, end, depth)) = stack.pop() {
            let order = &self.orders[0][start..end];
            let sum: f64 = order.iter().map(|&s| self.value(s)).sum();
            let count = end - start;
            let mean = sum / count as f64;
            let first = self.value(order[0]);
            let pure = order.iter().all(|&s| self.value(s) == first);
            self.nodes[node] = TreeNode::leaf(if pure { first } else { mean });
            let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
            if pure || count < self.params.min_samples_split.max(2) || !depth_ok {
                continue;
            }
            let Some(split) = self.best_split(start, end, sum) else {
                continue;
            };
            self.partition(start, end, &split);
            let left = self.nodes.len();
            self.nodes.push(TreeNode::leaf(0.0));
            self.nodes.push(TreeNode::leaf(0.0));
            self.nodes[node] = TreeNode {
                feature: split.feature as u32,
                threshold: split.threshold,
                left: left as u32,
                right: left as u32 + 1,
                value: mean,
            };
            let mid = start + split.left_count;
            stack.push((left + 1, mid, end, depth + 1));
            stack.push((left, start, mid, depth + 1));
        }
        RegressionTree { nodes: self.nodes }
    }
}

fn grow_tree(
    data: &Dataset,
    targets: &[f64],
    sample: &Presorted,
    params: TreeParams,
    seed: u64,
) -> RegressionTree {
    Grower {
        data,
        targets,
        params,
        rng: ChaCha8Rng::seed_from_u64(seed),
        nodes: Vec::new(),
        orders: sample.orders.clone(),
        rows: &sample.rows,
        goes_left: vec![false; sample.rows.len()],
        scratch: Vec::new(),
    }
    .grow()
}

/// Per-tree seed derived from the forest seed.
pub fn tree_seed(forest_seed: u64, tree: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(forest_seed);
    rng.set_stream(tree as u64 + 1);
    rng.random()
}

/// A forest of regression trees; the prediction is the mean over trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<RegressionTree>,
    pub tree_seeds: Vec<u64>,
}

impl RandomForest {
    pub fn predict(&self, x: &[f64]) -> f64 {
        // Averaging offsets from the first tree keeps agreeing trees exact.
        let Some(first) = self.trees.first().map(|t| t.predict(x)) else {
            return f64::NAN;
        };
        let spread: f64 = self.trees[1..].iter().map(|t| t.predict(x) - first).sum();
        first + spread / self.trees.len() as f64
    }
}

/// Fit one forest per target column. Tree `k` of every target is grown on
/// the same bootstrap sample, drawn from `tree_seed(seed, k)`.
pub fn fit_forests(
    data: &Dataset,
    targets: &[Vec<f64>],
    tree_count: usize,
    seed: u64,
    params: TreeParams,
) -> Result<Vec<RandomForest>> {
    if tree_count == 0 {
        return Err(Error::invalid("forest", "tree count must be positive"));
    }
    for t in targets {
        if t.len() != data.rows() {
            return Err(Error::invalid(
                "forest",
                "target length differs from row count",
            ));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("forest", "non-finite target value"));
        }
    }
    let n = data.rows();
    let per_tree: Vec<Vec<RegressionTree>> = (0..tree_count)
        .into_par_iter()
        .map(|k| {
            let seed_k = tree_seed(seed, k);
            let mut rng = ChaCha8Rng::seed_from_u64(seed_k);
            let rows: Vec<u32> = (0..n).map(|_| rng.random_range(0..n as u32)).collect();
            let sample = Presorted::new(data, rows);
            targets
                .iter()
                .enumerate()
                .map(|(target, y)| grow_tree(data, y, &sample, params, seed_k ^ target as u64))
                .collect()
        })
        .collect();
    let tree_seeds: Vec<u64> = (0..tree_count).map(|k| tree_seed(seed, k)).collect();
    Ok((0..targets.len())
        .map(|target| RandomForest {
            trees: per_tree.iter().map(|trees| trees[target].clone()).collect(),
            tree_seeds: tree_seeds.clone(),
        })
        .collect())
}
