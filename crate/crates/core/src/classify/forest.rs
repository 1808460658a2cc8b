//! Random forest of CART trees with Gini splits.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Hyperparams;
use crate::error::Result;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum TreeNode {
    /// Fraction of positive training samples reaching the leaf.
    Leaf { p: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { p } => return p,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [u8],
    max_features: usize,
    max_depth: usize,
    nodes: Vec<TreeNode>,
    rng: seed::Rng,
}

impl Builder<'_> {
    /// Best split over `feature` as `(weighted impurity, threshold)`.
    fn best_threshold(&self, samples: &[usize], feature: usize, buf: &mut Vec<(f64, u8)>) -> Option<(f64, f64)> {
        buf.clear();
        buf.extend(samples.iter().map(|&i| (self.x[(i, feature)], self.y[i])));
        buf.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = buf.len();
        let total_pos = buf.iter().filter(|v| v.1 == 1).count();
        let mut left_pos = 0;
        let mut best: Option<(f64, f64)> = None;
        for i in 0..n - 1 {
            left_pos += buf[i].1 as usize;
            if buf[i].0 == buf[i + 1].0 {
                continue;
            }
            let nl = i + 1;
            let nr = n - nl;
            let imp = (nl as f64 * gini(left_pos, nl) + nr as f64 * gini(total_pos - left_pos, nr)) / n as f64;
            if best.is_none_or(|(b, _)| imp < b) {
                let mid = buf[i].0 + (buf[i + 1].0 - buf[i].0) / 2.0;
                // Guard against the midpoint rounding onto the upper value.
                let threshold = if mid < buf[i + 1].0 { mid } else { buf[i].0 };
                best = Some((imp, threshold));
            }
        }
        best
    }

    fn build(&mut self, samples: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let pos = samples.iter().filter(|&&i| self.y[i] == 1).count();
        let p = pos as f64 / samples.len() as f64;
        self.nodes.push(TreeNode::Leaf { p });
        if pos == 0 || pos == samples.len() || samples.len() < 2 || depth >= self.max_depth {
            return id;
        }
        let mut features: Vec<usize> = (0..self.x.ncols()).collect();
        features.shuffle(&mut self.rng);
        let mut buf = Vec::with_capacity(samples.len());
        let mut best: Option<(f64, usize, f64)> = None;
        // Keep drawing past max_features until some split is possible.
        for (tried, &f) in features.iter().enumerate() {
            if tried >= self.max_features && best.is_some() {
                break;
            }
            if let Some((imp, thr)) = self.best_threshold(&samples, f, &mut buf) {
                if best.is_none_or(|(b, _, _)| imp < b) {
                    best = Some((imp, f, thr));
                }
            }
        }
        let Some((_, feature, threshold)) = best else { return id };
        let (l, r): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| self.x[(i, feature)] <= threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = TreeNode::Split { feature, threshold, left, right };
        id
    }
}

fn fit_tree(x: &DMatrix<f64>, y: &[u8], samples: Vec<usize>, max_features: usize, max_depth: usize, rng: seed::Rng) -> DecisionTree {
    let mut b = Builder { x, y, max_features, max_depth, nodes: Vec::new(), rng };
    b.build(samples, 0);
    DecisionTree { nodes: b.nodes }
}

/// Bagged trees, trained in parallel with per-tree seeds. Returns the trees
/// and the out-of-bag accuracy when bootstrapping leaves some sample out of
/// at least one tree.
pub(super) fn fit_forest(x: &DMatrix<f64>, y: &[u8], h: &Hyperparams, root: u64) -> Result<(Vec<DecisionTree>, Option<f64>)> {
    let (n, d) = x.shape();
    let max_features = h.max_features.unwrap_or(((d as f64).sqrt().floor() as usize).max(1)).clamp(1, d);
    let max_depth = h.max_depth.unwrap_or(usize::MAX);
    let n_trees = h.n_trees.max(1);
    let fitted: Vec<(DecisionTree, Vec<bool>)> = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed::derive(root, "tree", t as u64));
            let mut in_bag = vec![!h.bootstrap; n];
            let samples: Vec<usize> = if h.bootstrap {
                (0..n)
                    .map(|_| {
                        let i = rng.random_range(0..n);
                        in_bag[i] = true;
                        i
                    })
                    .collect()
            } else {
                (0..n).collect()
            };
            (fit_tree(x, y, samples, max_features, max_depth, rng), in_bag)
        })
        .collect();

    let mut votes = vec![(0.0, 0usize); n];
    for (tree, in_bag) in &fitted {
        for i in 0..n {
            if !in_bag[i] {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                votes[i].0 += tree.predict_row(&row);
                votes[i].1 += 1;
            }
        }
    }
    let scored: Vec<(usize, bool)> = votes
        .iter()
        .enumerate()
        .filter(|(_, v)| v.1 > 0)
        .map(|(i, v)| (i, u8::from(v.0 / v.1 as f64 > 0.5) == y[i]))
        .collect();
    let oob = (!scored.is_empty()).then(|| scored.iter().filter(|s| s.1).count() as f64 / scored.len() as f64);
    Ok((fitted.into_iter().map(|(t, _)| t).collect(), oob))
}
