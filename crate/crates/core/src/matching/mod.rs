//! Treated/control splitting and matching strategies.
//!
//! All strategies match with replacement by default (a control may serve
//! several treated samples) and break ties towards the lowest control index.

mod kdtree;

use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{center_columns, dot, sym_eigen_desc};
use crate::logistic::{fit_logistic, LogisticModel};
use crate::seed;

pub use kdtree::KdTree;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSplit {
    pub treated: Vec<usize>,
    pub control: Vec<usize>,
}

/// Partition sample indices by a binary treatment vector.
pub fn split_groups(treatment: &[u8]) -> Result<GroupSplit> {
    let mut split = GroupSplit { treated: Vec::new(), control: Vec::new() };
    for (i, &t) in treatment.iter().enumerate() {
        match t {
            1 => split.treated.push(i),
            0 => split.control.push(i),
            other => return Err(Error::InvalidInput(format!("treatment value {other} at {i} is not binary"))),
        }
    }
    if split.treated.is_empty() || split.control.is_empty() {
        return Err(Error::DegenerateTreatment(format!(
            "{} treated, {} control",
            split.treated.len(),
            split.control.len()
        )));
    }
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    LatentNnm,
    SurfaceNnm,
    Psm,
    Mdm,
    Random,
    GroundTruth,
}

impl MatchStrategy {
    pub fn name(self) -> &'static str {
        match self {
            MatchStrategy::LatentNnm => "latent_nnm",
            MatchStrategy::SurfaceNnm => "surface_nnm",
            MatchStrategy::Psm => "psm",
            MatchStrategy::Mdm => "mdm",
            MatchStrategy::Random => "random",
            MatchStrategy::GroundTruth => "ground_truth",
        }
    }

    /// Whether the β similarity gate applies (cosine similarities only).
    pub fn uses_cosine(self) -> bool {
        matches!(self, MatchStrategy::LatentNnm | MatchStrategy::SurfaceNnm)
    }
}

impl std::str::FromStr for MatchStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "latent_nnm" => MatchStrategy::LatentNnm,
            "surface_nnm" => MatchStrategy::SurfaceNnm,
            "psm" => MatchStrategy::Psm,
            "mdm" => MatchStrategy::Mdm,
            "random" => MatchStrategy::Random,
            "ground_truth" => MatchStrategy::GroundTruth,
            other => return Err(Error::InvalidInput(format!("unknown matching strategy {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub treated: usize,
    pub control: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPairList {
    pub pairs: Vec<MatchPair>,
    pub strategy: MatchStrategy,
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    treated_idx: usize,
    control_idx: usize,
    similarity: f64,
    strategy: String,
}

impl MatchPairList {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Keep only pairs with similarity strictly above `beta`. A gate at or
    /// below -1 is treated as disabled.
    pub fn gated(mut self, beta: f64) -> MatchPairList {
        if beta > -1.0 {
            self.pairs.retain(|p| p.similarity > beta);
        }
        self
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for p in &self.pairs {
            wr.serialize(PairRecord {
                treated_idx: p.treated,
                control_idx: p.control,
                similarity: p.similarity,
                strategy: self.strategy.name().to_string(),
            })?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<MatchPairList> {
        let mut rd = csv::Reader::from_reader(r);
        let mut pairs = Vec::new();
        let mut strategy = None;
        for rec in rd.deserialize() {
            let rec: PairRecord = rec?;
            let s: MatchStrategy = rec.strategy.parse()?;
            if strategy.is_some_and(|prev| prev != s) {
                return Err(Error::InvalidInput("mixed strategies in one pair list".into()));
            }
            strategy = Some(s);
            pairs.push(MatchPair { treated: rec.treated_idx, control: rec.control_idx, similarity: rec.similarity });
        }
        let strategy = strategy.ok_or_else(|| Error::InvalidInput("empty pair list".into()))?;
        Ok(MatchPairList { pairs, strategy })
    }
}

/// Cosine similarity and whether a zero vector forced the value to 0.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> (f64, bool) {
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return (0.0, true);
    }
    ((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0), false)
}

fn normalized_row(x: &DMatrix<f64>, i: usize) -> Vec<f64> {
    let v: Vec<f64> = x.row(i).iter().copied().collect();
    let n = dot(&v, &v).sqrt();
    if n == 0.0 {
        v
    } else {
        v.into_iter().map(|a| a / n).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// KD-tree for representations of at most 64 dimensions, otherwise a
    /// linear scan.
    #[default]
    Auto,
    KdTree,
    BruteForce,
}

const AUTO_KD_MAX_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NnmOptions {
    pub beta: f64,
    pub search: SearchMode,
    /// Greedy matching without replacement, in treated-index order.
    pub without_replacement: bool,
}

impl Default for NnmOptions {
    fn default() -> Self {
        NnmOptions { beta: 0.0, search: SearchMode::Auto, without_replacement: false }
    }
}

fn check_rows(split: &GroupSplit, n: usize) -> Result<()> {
    if split.control.is_empty() {
        return Err(Error::EmptyGroup("control"));
    }
    let max = split.treated.iter().chain(&split.control).copied().max().unwrap_or(0);
    if max >= n {
        return Err(Error::Dimension(format!("sample {max} outside representation with {n} rows")));
    }
    Ok(())
}

/// Cosine nearest-neighbour matching on the rows of `rep`.
pub fn nnm_match(split: &GroupSplit, rep: &DMatrix<f64>, strategy: MatchStrategy, opts: &NnmOptions) -> Result<MatchPairList> {
    check_rows(split, rep.nrows())?;
    let dim = rep.ncols();
    let use_tree = !opts.without_replacement
        && match opts.search {
            SearchMode::Auto => dim <= AUTO_KD_MAX_DIM,
            SearchMode::KdTree => true,
            SearchMode::BruteForce => false,
        };
    let pairs = if use_tree {
        let tree = KdTree::build(dim, split.control.iter().map(|&c| (c, normalized_row(rep, c))).collect());
        let lowest = split.control[0];
        split
            .treated
            .iter()
            .map(|&t| {
                let q = normalized_row(rep, t);
                let (control, similarity) = if q.iter().all(|&v| v == 0.0) {
                    (lowest, 0.0)
                } else {
                    tree.nearest(&q, &|_| false).expect("non-empty control group")
                };
                MatchPair { treated: t, control, similarity }
            })
            .collect()
    } else {
        brute_force_pairs(split, rep, opts.without_replacement)
    };
    Ok(MatchPairList { pairs, strategy }.gated(opts.beta))
}

fn brute_force_pairs(split: &GroupSplit, rep: &DMatrix<f64>, without_replacement: bool) -> Vec<MatchPair> {
    let controls: Vec<(usize, Vec<f64>)> = split.control.iter().map(|&c| (c, normalized_row(rep, c))).collect();
    let mut used = vec![false; controls.len()];
    let mut pairs = Vec::with_capacity(split.treated.len());
    for &t in &split.treated {
        let q = normalized_row(rep, t);
        let mut best: Option<(usize, f64, usize)> = None;
        for (slot, (c, v)) in controls.iter().enumerate() {
            if without_replacement && used[slot] {
                continue;
            }
            let s = kdtree::clamp_sim(dot(&q, v));
            if kdtree::better(s, *c, best.map(|(id, s, _)| (id, s))) {
                best = Some((*c, s, slot));
            }
        }
        if let Some((control, similarity, slot)) = best {
            used[slot] = true;
            pairs.push(MatchPair { treated: t, control, similarity });
        }
    }
    pairs
}

/// Linear-scan reference matcher (with replacement, no gate).
pub fn brute_force_nnm(split: &GroupSplit, rep: &DMatrix<f64>, strategy: MatchStrategy) -> Result<MatchPairList> {
    check_rows(split, rep.nrows())?;
    Ok(MatchPairList { pairs: brute_force_pairs(split, rep, false), strategy })
}

/// Propensity score model `e(x) = sigmoid(w.x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Penalty on `0.5 |w|^2` relative to the summed log-likelihood.
    pub regularization: f64,
    pub gradient_norm: f64,
}

impl PropensityModel {
    pub fn scores(&self, x: &DMatrix<f64>) -> Vec<f64> {
        LogisticModel {
            coefficients: self.coefficients.clone(),
            intercept: self.intercept,
            l2: 0.0,
            iterations: 0,
            gradient_norm: 0.0,
        }
        .predict_proba(x)
    }
}

/// L2-penalised logistic regression of the treatment on `x`. `l2` weighs
/// `0.5 |w|^2` against the summed (not averaged) log-likelihood and must be
/// positive.
pub fn fit_propensity(x: &DMatrix<f64>, treatment: &[u8], l2: f64) -> Result<PropensityModel> {
    if treatment.iter().all(|&t| t == treatment[0]) {
        return Err(Error::DegenerateTreatment("propensity needs both treatment values".into()));
    }
    let n = x.nrows().max(1) as f64;
    let m = fit_logistic(x, treatment, l2 / n, 1e-7)?;
    Ok(PropensityModel {
        coefficients: m.coefficients,
        intercept: m.intercept,
        regularization: l2,
        gradient_norm: m.gradient_norm * n,
    })
}

/// Match each treated sample to the control with the closest propensity
/// score; pairs further apart than `caliper` are dropped. Similarity is the
/// negated score difference.
pub fn psm_match(split: &GroupSplit, scores: &[f64], caliper: f64) -> Result<MatchPairList> {
    check_rows(split, scores.len())?;
    let mut sorted: Vec<(f64, usize)> = split.control.iter().map(|&c| (scores[c], c)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut pairs = Vec::with_capacity(split.treated.len());
    for &t in &split.treated {
        let q = scores[t];
        let pos = sorted.partition_point(|&(s, _)| s < q);
        let mut best: Option<(usize, f64)> = None;
        // Right neighbour group: the first entry has the lowest index among
        // equal scores.
        if pos < sorted.len() {
            let (s, c) = sorted[pos];
            best = Some((c, (s - q).abs()));
        }
        if pos > 0 {
            let s = sorted[pos - 1].0;
            let first = sorted.partition_point(|&(v, _)| v < s);
            let c = sorted[first].1;
            let d = (q - s).abs();
            best = match best {
                Some((bc, bd)) if bd < d || (bd == d && bc < c) => Some((bc, bd)),
                _ => Some((c, d)),
            };
        }
        let (control, d) = best.expect("non-empty control group");
        if d <= caliper {
            pairs.push(MatchPair { treated: t, control, similarity: -d });
        }
    }
    Ok(MatchPairList { pairs, strategy: MatchStrategy::Psm })
}

/// `sqrt((u - v)' S^-1 (u - v))` for a precomputed inverse covariance.
pub fn mahalanobis(u: &[f64], v: &[f64], s_inv: &DMatrix<f64>) -> f64 {
    let d = u.len();
    let diff: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
    let mut q = 0.0;
    for i in 0..d {
        let mut row = 0.0;
        for j in 0..d {
            row += s_inv[(i, j)] * diff[j];
        }
        q += diff[i] * row;
    }
    q.max(0.0).sqrt()
}

/// Ridge added to the covariance: `rel * trace(S) / D`.
pub const DEFAULT_MDM_RIDGE: f64 = 1e-3;

fn covariance_ridge(xc: &DMatrix<f64>, rel: f64) -> f64 {
    let n = xc.nrows().max(2) as f64;
    let trace = xc.norm_squared() / (n - 1.0);
    rel * trace / xc.ncols().max(1) as f64
}

/// `(S + lambda I)^-1` with `lambda = rel * trace(S) / D`, for small D.
pub fn regularized_inverse_covariance(x: &DMatrix<f64>, rel: f64) -> Result<DMatrix<f64>> {
    let (_, xc) = center_columns(x);
    let n = xc.nrows().max(2) as f64;
    let d = xc.ncols();
    let s = xc.tr_mul(&xc) / (n - 1.0) + DMatrix::identity(d, d) * covariance_ridge(&xc, rel);
    s.cholesky().map(|c| c.inverse()).ok_or(Error::NotPositiveDefinite)
}

/// Coordinates in which Euclidean distance equals the Mahalanobis distance
/// under `S + lambda I`. When D > N the differences between samples lie in
/// the row space of the centred data, so only the leading N directions are
/// needed.
pub fn whiten(x: &DMatrix<f64>, rel: f64) -> Result<DMatrix<f64>> {
    let (_, xc) = center_columns(x);
    let (n, d) = xc.shape();
    let lambda = covariance_ridge(&xc, rel);
    if !(lambda > 0.0) {
        // Constant data: every distance is zero.
        return Ok(DMatrix::zeros(n, 1));
    }
    let denom = (n.max(2) - 1) as f64;
    if d <= n {
        let s = xc.tr_mul(&xc) / denom + DMatrix::identity(d, d) * lambda;
        let chol = s.cholesky().ok_or(Error::NotPositiveDefinite)?;
        // z_i = L^-1 x_i, i.e. Z' = L^-1 Xc'.
        let zt = chol.l().solve_lower_triangular(&xc.transpose()).ok_or(Error::NotPositiveDefinite)?;
        Ok(zt.transpose())
    } else {
        let (vals, vecs) = sym_eigen_desc(&xc * xc.transpose());
        let mut z = DMatrix::zeros(n, n);
        for k in 0..n {
            let sq = vals[k].max(0.0);
            let scale = sq.sqrt() / (sq / denom + lambda).sqrt();
            z.set_column(k, &(vecs.column(k) * scale));
        }
        Ok(z)
    }
}

/// Mahalanobis distance matching: Euclidean nearest control in whitened
/// coordinates. Similarity is the negated distance.
pub fn mdm_match(split: &GroupSplit, x: &DMatrix<f64>, rel: f64) -> Result<MatchPairList> {
    check_rows(split, x.nrows())?;
    let z = whiten(x, rel)?;
    let mut pairs = Vec::with_capacity(split.treated.len());
    for &t in &split.treated {
        let mut best: Option<(usize, f64)> = None;
        for &c in &split.control {
            let d2 = (z.row(t) - z.row(c)).norm_squared();
            if best.is_none_or(|(bc, bd)| d2 < bd || (d2 == bd && c < bc)) {
                best = Some((c, d2));
            }
        }
        let (control, d2) = best.expect("non-empty control group");
        pairs.push(MatchPair { treated: t, control, similarity: -d2.sqrt() });
    }
    Ok(MatchPairList { pairs, strategy: MatchStrategy::Mdm })
}

/// Uniformly random control (with replacement) for every treated sample.
pub fn random_match(split: &GroupSplit, seed: u64) -> Result<MatchPairList> {
    if split.control.is_empty() {
        return Err(Error::EmptyGroup("control"));
    }
    let mut rng = seed::rng(seed);
    let pairs = split
        .treated
        .iter()
        .map(|&t| {
            let c = split.control[rng.random_range(0..split.control.len())];
            MatchPair { treated: t, control: c, similarity: 0.0 }
        })
        .collect();
    Ok(MatchPairList { pairs, strategy: MatchStrategy::Random })
}

/// Pair every treated sample with its generator twin. The twin relation is
/// symmetric; treated samples whose twin is also treated under this split
/// carry no contrast and are dropped.
pub fn ground_truth_match(split: &GroupSplit, twin_map: &[(usize, usize)]) -> Result<MatchPairList> {
    let mut twin: HashMap<usize, usize> = HashMap::with_capacity(2 * twin_map.len());
    for &(a, b) in twin_map {
        twin.insert(a, b);
        twin.insert(b, a);
    }
    let mut is_control = vec![false; split.treated.iter().chain(&split.control).copied().max().map_or(0, |m| m + 1)];
    for &c in &split.control {
        is_control[c] = true;
    }
    let mut pairs = Vec::with_capacity(split.treated.len());
    for &t in &split.treated {
        let &c = twin.get(&t).ok_or_else(|| Error::MissingGroundTruth(format!("no twin for sample {t}")))?;
        if is_control.get(c).copied().unwrap_or(false) {
            pairs.push(MatchPair { treated: t, control: c, similarity: 1.0 });
        }
    }
    Ok(MatchPairList { pairs, strategy: MatchStrategy::GroundTruth })
}
