//! Binary CART trees with Gini impurity and per-node feature subsampling.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features tried at each split; `None` means `ceil(sqrt(d))`.
    pub features_per_split: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 12,
            min_samples_leaf: 2,
            features_per_split: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        feature: u16,
        threshold: f64,
        left: u32,
        right: u32,
    },
    /// Fraction of positive training samples that reached the leaf.
    Leaf { prob: f64 },
}

/// Nodes stored flat; the root is node 0. Samples with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub(crate) nodes: Vec<Node>,
    pub(crate) n_features: usize,
    /// Weighted impurity decrease per feature, summed over the tree.
    pub(crate) importances: Vec<f64>,
}

impl DecisionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                Node::Leaf { prob } => return prob,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature as usize] <= threshold { left } else { right } as usize;
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.predict_proba(x) > 0.5
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, left as usize).max(walk(nodes, right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Rebuilds a tree from stored nodes, checking its structure.
    pub(crate) fn from_nodes(nodes: Vec<Node>, n_features: usize) -> Result<Self, String> {
        if nodes.is_empty() {
            return Err("tree without nodes".into());
        }
        for (i, n) in nodes.iter().enumerate() {
            if let Node::Split { feature, left, right, threshold } = *n {
                if feature as usize >= n_features {
                    return Err(format!("node {i}: feature {feature} out of range"));
                }
                if !threshold.is_finite() {
                    return Err(format!("node {i}: non-finite threshold"));
                }
                // children always follow their parent
                for c in [left, right] {
                    if c as usize <= i || c as usize >= nodes.len() {
                        return Err(format!("node {i}: bad child {c}"));
                    }
                }
            }
        }
        Ok(DecisionTree {
            nodes,
            n_features,
            importances: vec![0.0; n_features],
        })
    }
}

fn gini(pos: f64, total: f64) -> f64 {
    if total == 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p)
}

struct Builder<'a, R: Rng> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    params: TreeParams,
    n_try: usize,
    rng: &'a mut R,
    nodes: Vec<Node>,
    importances: Vec<f64>,
    total: f64,
}

impl<R: Rng> Builder<'_, R> {
    fn build(&mut self, idx: &mut [usize], depth: usize) -> u32 {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        let node_id = self.nodes.len() as u32;
        let prob = pos as f64 / n as f64;
        self.nodes.push(Node::Leaf { prob });
        if pos == 0 || pos == n || depth >= self.params.max_depth || n < 2 * self.params.min_samples_leaf {
            return node_id;
        }
        let Some((feature, threshold, gain)) = self.best_split(idx, pos) else {
            return node_id;
        };
        self.importances[feature] += gain * n as f64 / self.total;

        // partition in place: left block first
        let mut split = 0;
        for k in 0..n {
            if self.x[idx[k]][feature] <= threshold {
                idx.swap(k, split);
                split += 1;
            }
        }
        let (l, r) = idx.split_at_mut(split);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[node_id as usize] = Node::Split {
            feature: feature as u16,
            threshold,
            left,
            right,
        };
        node_id
    }

    fn best_split(&mut self, idx: &[usize], pos: usize) -> Option<(usize, f64, f64)> {
        let n = idx.len();
        let d = self.x[0].len();
        let parent = gini(pos as f64, n as f64);
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order: Vec<(f64, bool)> = Vec::with_capacity(n);
        for feature in index::sample(self.rng, d, self.n_try.min(d)).into_vec() {
            order.clear();
            order.extend(idx.iter().map(|&i| (self.x[i][feature], self.y[i])));
            order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0usize;
            for k in 0..n - 1 {
                if order[k].1 {
                    left_pos += 1;
                }
                let left_n = k + 1;
                if order[k].0 == order[k + 1].0 || left_n < min_leaf || n - left_n < min_leaf {
                    continue;
                }
                let right_n = n - left_n;
                let child = (left_n as f64 * gini(left_pos as f64, left_n as f64)
                    + right_n as f64 * gini((pos - left_pos) as f64, right_n as f64))
                    / n as f64;
                let gain = parent - child;
                if best.is_none_or(|b| gain > b.2) {
                    let mut threshold = order[k].0 + (order[k + 1].0 - order[k].0) / 2.0;
                    // midpoint can round up onto the right value
                    if threshold >= order[k + 1].0 {
                        threshold = order[k].0;
                    }
                    best = Some((feature, threshold, gain));
                }
            }
        }
        best
    }
}

/// Grows a tree on the rows `sample_idx` of `x` (repeats allowed, as in a
/// bootstrap). A single-class input gives a single leaf.
pub fn train_tree_on<R: Rng>(
    x: &[Vec<f64>],
    y: &[bool],
    sample_idx: &[usize],
    params: &TreeParams,
    rng: &mut R,
) -> DecisionTree {
    assert!(!sample_idx.is_empty(), "empty training set");
    let d = x[sample_idx[0]].len();
    let n_try = params
        .features_per_split
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d.max(1));
    let mut idx = sample_idx.to_vec();
    let mut b = Builder {
        x,
        y,
        params: *params,
        n_try,
        rng,
        nodes: Vec::new(),
        importances: vec![0.0; d],
        total: idx.len() as f64,
    };
    b.build(&mut idx, 0);
    DecisionTree {
        nodes: b.nodes,
        n_features: d,
        importances: b.importances,
    }
}

/// Trains on all samples.
pub fn train_tree<R: Rng>(samples: &[(Vec<f64>, bool)], params: &TreeParams, rng: &mut R) -> DecisionTree {
    let x: Vec<Vec<f64>> = samples.iter().map(|s| s.0.clone()).collect();
    let y: Vec<bool> = samples.iter().map(|s| s.1).collect();
    let idx: Vec<usize> = (0..samples.len()).collect();
    train_tree_on(&x, &y, &idx, params, rng)
}
