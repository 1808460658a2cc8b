//! Exact maximum-cosine search over l2-normalised vectors.
//!
//! For unit vectors `|q - c|^2 = 2 - 2 q.c`, so the nearest Euclidean
//! neighbour is the most cosine-similar one. Leaves are scanned with the same
//! dot product the brute-force scan uses, and a subtree is skipped only when
//! the distance to its splitting plane proves that nothing in it can reach
//! the current best similarity (with a small slack so ties are still
//! visited). Results are therefore identical to a linear scan, including the
//! lowest-index tie-break.

use crate::linalg::dot;

const LEAF_SIZE: usize = 16;
const PRUNE_SLACK: f64 = 1e-9;

enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: Box<Node>, right: Box<Node> },
}

pub struct KdTree {
    dim: usize,
    /// Row-major normalised points, permuted into tree order.
    points: Vec<f64>,
    /// Caller-supplied id of each point in tree order.
    ids: Vec<usize>,
    root: Node,
}

impl KdTree {
    /// Build from `(id, normalised vector)` pairs.
    pub fn build(dim: usize, items: Vec<(usize, Vec<f64>)>) -> KdTree {
        let mut items = items;
        let root = Self::build_node(&mut items, 0, dim);
        let mut points = Vec::with_capacity(items.len() * dim);
        let mut ids = Vec::with_capacity(items.len());
        for (id, v) in items {
            ids.push(id);
            points.extend_from_slice(&v);
        }
        KdTree { dim, points, ids, root }
    }

    fn build_node(items: &mut [(usize, Vec<f64>)], offset: usize, dim: usize) -> Node {
        let n = items.len();
        if n <= LEAF_SIZE || dim == 0 {
            return Node::Leaf { start: offset, end: offset + n };
        }
        let mut best_dim = 0;
        let mut best_spread = -1.0;
        for d in 0..dim {
            let (lo, hi) = items.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, v)| {
                (lo.min(v[d]), hi.max(v[d]))
            });
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_dim = d;
            }
        }
        if best_spread <= 0.0 {
            return Node::Leaf { start: offset, end: offset + n };
        }
        items.sort_by(|a, b| a.1[best_dim].total_cmp(&b.1[best_dim]).then(a.0.cmp(&b.0)));
        let mid = n / 2;
        let value = items[mid].1[best_dim];
        let (l, r) = items.split_at_mut(mid);
        let left = Box::new(Self::build_node(l, offset, dim));
        let right = Box::new(Self::build_node(r, offset + mid, dim));
        Node::Split { dim: best_dim, value, left, right }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Most similar point to the normalised query `q` as `(id, similarity)`;
    /// ties go to the lowest id. Optionally skips ids for which `exclude`
    /// returns true.
    pub fn nearest(&self, q: &[f64], exclude: &dyn Fn(usize) -> bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        self.search(&self.root, q, exclude, &mut best);
        best
    }

    fn search(&self, node: &Node, q: &[f64], exclude: &dyn Fn(usize) -> bool, best: &mut Option<(usize, f64)>) {
        match node {
            Node::Leaf { start, end } => {
                for i in *start..*end {
                    let id = self.ids[i];
                    if exclude(id) {
                        continue;
                    }
                    let s = clamp_sim(dot(q, &self.points[i * self.dim..(i + 1) * self.dim]));
                    if better(s, id, *best) {
                        *best = Some((id, s));
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[*dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, exclude, best);
                let prune = match *best {
                    Some((_, s)) => diff * diff > 2.0 - 2.0 * s + PRUNE_SLACK,
                    None => false,
                };
                if !prune {
                    self.search(far, q, exclude, best);
                }
            }
        }
    }
}

pub(crate) fn clamp_sim(s: f64) -> f64 {
    s.clamp(-1.0, 1.0)
}

pub(crate) fn better(s: f64, id: usize, best: Option<(usize, f64)>) -> bool {
    match best {
        None => true,
        Some((bid, bs)) => s > bs || (s == bs && id < bid),
    }
}
