//! Sum-of-trees ensembles with cached per-tree fits, plus a compact
//! read-only snapshot used for storing posterior draws.

use serde::{Deserialize, Serialize};

use crate::data::Features;
use crate::tree::{NodeKind, Tree, ROOT};

/// Anything that maps one covariate row to a real prediction.
pub trait RowPredictor {
    fn predict_with<F: Fn(usize) -> f64>(&self, get: F) -> f64;
}

impl RowPredictor for Tree {
    fn predict_with<F: Fn(usize) -> f64>(&self, get: F) -> f64 {
        self.evaluate_with(get)
    }
}

#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
    tree_fits: Vec<Vec<f64>>,
    total_fit: Vec<f64>,
}

impl Forest {
    /// `n_trees` stumps, each with leaf value `mu`.
    pub fn new(n_trees: usize, n_rows: usize, mu: f64) -> Self {
        Forest {
            trees: (0..n_trees).map(|_| Tree::stump(n_rows, mu)).collect(),
            tree_fits: vec![vec![mu; n_rows]; n_trees],
            total_fit: vec![mu * n_trees as f64; n_rows],
        }
    }

    pub fn from_trees(trees: Vec<Tree>, n_rows: usize) -> Self {
        let mut forest = Forest {
            tree_fits: vec![vec![0.0; n_rows]; trees.len()],
            total_fit: vec![0.0; n_rows],
            trees,
        };
        forest.rebuild_cache();
        forest
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_rows(&self) -> usize {
        self.total_fit.len()
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn tree(&self, h: usize) -> &Tree {
        &self.trees[h]
    }

    pub fn tree_mut(&mut self, h: usize) -> &mut Tree {
        &mut self.trees[h]
    }

    /// Cached fit of the whole forest on its training rows.
    pub fn fit(&self) -> &[f64] {
        &self.total_fit
    }

    pub fn tree_fit(&self, h: usize) -> &[f64] {
        &self.tree_fits[h]
    }

    /// Recomputes tree `h`'s cached fit from its leaves and patches the total.
    pub fn refresh_tree(&mut self, h: usize) {
        let old = std::mem::take(&mut self.tree_fits[h]);
        let mut new = vec![0.0; old.len()];
        self.trees[h].fill_fit(&mut new);
        for ((t, o), n) in self.total_fit.iter_mut().zip(&old).zip(&new) {
            *t += n - o;
        }
        self.tree_fits[h] = new;
    }

    /// Recomputes every cache from scratch.
    pub fn rebuild_cache(&mut self) {
        let n = self.total_fit.len();
        self.total_fit = vec![0.0; n];
        for (tree, fit) in self.trees.iter().zip(self.tree_fits.iter_mut()) {
            tree.fill_fit(fit);
            for (t, f) in self.total_fit.iter_mut().zip(fit.iter()) {
                *t += f;
            }
        }
    }

    /// Largest absolute gap between the cached fit and a fresh evaluation
    /// of every tree on `features`.
    pub fn cache_error(&self, features: &Features) -> f64 {
        let fresh = forest_fit(self, features);
        let total = self
            .total_fit
            .iter()
            .zip(&fresh)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let per_tree = self
            .trees
            .iter()
            .zip(&self.tree_fits)
            .flat_map(|(t, fit)| {
                fit.iter()
                    .enumerate()
                    .map(move |(i, v)| (v - t.evaluate_row(features, i)).abs())
            })
            .fold(0.0, f64::max);
        total.max(per_tree)
    }

    /// Per-variable split counts summed over trees.
    pub fn split_counts(&self, n_vars: usize) -> Vec<u32> {
        let mut counts = vec![0u32; n_vars];
        for t in &self.trees {
            t.add_split_counts(&mut counts);
        }
        counts
    }

    pub fn snapshot(&self) -> ForestSnapshot {
        ForestSnapshot {
            trees: self.trees.iter().map(CompactTree::from_tree).collect(),
        }
    }
}

impl RowPredictor for Forest {
    fn predict_with<F: Fn(usize) -> f64>(&self, get: F) -> f64 {
        self.trees.iter().map(|t| t.evaluate_with(&get)).sum()
    }
}

/// Sum of tree evaluations for every row of `features`, computed by
/// traversal rather than from caches.
pub fn forest_fit(forest: &Forest, features: &Features) -> Vec<f64> {
    (0..features.n_rows())
        .map(|i| forest.predict_with(|j| features.get(i, j)))
        .collect()
}

/// Flattened tree: internal nodes as `Split`, leaves as `Leaf`, root first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactTree {
    pub nodes: Vec<CompactNode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CompactNode {
    Split {
        var: usize,
        cut: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        mu: f64,
    },
}

impl CompactTree {
    pub fn from_tree(tree: &Tree) -> Self {
        let mut nodes = Vec::new();
        Self::push(tree, ROOT, &mut nodes);
        CompactTree { nodes }
    }

    fn push(tree: &Tree, id: usize, nodes: &mut Vec<CompactNode>) -> u32 {
        let slot = nodes.len();
        match tree.node(id).kind {
            NodeKind::Terminal { mu } => nodes.push(CompactNode::Leaf { mu }),
            NodeKind::Internal { rule, left, right } => {
                nodes.push(CompactNode::Leaf { mu: 0.0 });
                let l = Self::push(tree, left, nodes);
                let r = Self::push(tree, right, nodes);
                nodes[slot] = CompactNode::Split {
                    var: rule.var,
                    cut: rule.cut,
                    left: l,
                    right: r,
                };
            }
        }
        slot as u32
    }
}

impl RowPredictor for CompactTree {
    fn predict_with<F: Fn(usize) -> f64>(&self, get: F) -> f64 {
        let mut idx = 0usize;
        loop {
            match self.nodes[idx] {
                CompactNode::Leaf { mu } => return mu,
                CompactNode::Split {
                    var,
                    cut,
                    left,
                    right,
                } => idx = if get(var) <= cut { left as usize } else { right as usize },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestSnapshot {
    pub trees: Vec<CompactTree>,
}

impl ForestSnapshot {
    pub fn split_counts(&self, n_vars: usize) -> Vec<u32> {
        let mut counts = vec![0u32; n_vars];
        for t in &self.trees {
            for n in &t.nodes {
                if let CompactNode::Split { var, .. } = n {
                    counts[*var] += 1;
                }
            }
        }
        counts
    }
}

impl RowPredictor for ForestSnapshot {
    fn predict_with<F: Fn(usize) -> f64>(&self, get: F) -> f64 {
        self.trees.iter().map(|t| t.predict_with(&get)).sum()
    }
}
