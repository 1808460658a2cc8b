//! Downstream classifiers, metrics and the L1 feature-ranking baseline.

mod forest;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledDataset;
use crate::error::{Error, Result};
use crate::logistic::{fit_logistic, sigmoid};
use crate::select::{FeatureReport, FeatureResult};

pub use forest::{DecisionTree, TreeNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Logreg,
    LogregL1,
    RandomForest,
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logreg" | "lr" => Ok(ClassifierKind::Logreg),
            "logreg_l1" | "l1" => Ok(ClassifierKind::LogregL1),
            "random_forest" | "rf" => Ok(ClassifierKind::RandomForest),
            other => Err(Error::InvalidInput(format!("unknown classifier {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    /// L2 weight on `0.5 |w|^2` against the summed log-likelihood.
    pub l2: f64,
    /// L1 weight on `|w|_1` against the mean log-likelihood.
    pub l1: f64,
    pub n_trees: usize,
    /// Features tried per split; `None` means `floor(sqrt(D))`.
    pub max_features: Option<usize>,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams { l2: 1.0, l1: 0.01, n_trees: 100, max_features: None, max_depth: None, bootstrap: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelParams {
    Linear { coefficients: Vec<f64>, intercept: f64, gradient_norm: f64 },
    Forest { trees: Vec<DecisionTree>, oob_accuracy: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub kind: ClassifierKind,
    pub seed: u64,
    pub n_features: usize,
    pub params: ModelParams,
}

fn check_training(x: &DMatrix<f64>, y: &[u8]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!("{} rows vs {} labels", x.nrows(), y.len())));
    }
    if x.ncols() == 0 {
        return Err(Error::InvalidInput("no features to train on".into()));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::InvalidInput("labels must be 0 or 1".into()));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Largest eigenvalue of `X'X / n` by power iteration.
fn lipschitz(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows() as f64;
    let mut v = DVector::from_element(x.ncols(), 1.0 / (x.ncols() as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..100 {
        let w = x.tr_mul(&(x * &v)) / n;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w / norm;
    }
    lambda
}

/// L1-penalised logistic regression by accelerated proximal gradient on
/// `mean log-loss + l1 |w|_1`; the intercept is not penalised.
pub fn fit_logreg_l1(x: &DMatrix<f64>, y: &[u8], l1: f64) -> Result<(Vec<f64>, f64)> {
    check_training(x, y)?;
    let (n, d) = x.shape();
    let yf = DVector::from_iterator(n, y.iter().map(|&v| v as f64));
    // Intercept column has mean square 1, so the bound covers it too.
    let step = 1.0 / (0.25 * (lipschitz(x) + 1.0));
    let rate = yf.mean();
    let mut w = DVector::zeros(d);
    let mut b = (rate / (1.0 - rate)).ln();
    let (mut zw, mut zb) = (w.clone(), b);
    let mut t = 1.0f64;
    let mut iterations = 0;
    for _ in 0..20_000 {
        let m = (x * &zw).add_scalar(zb);
        let r = DVector::from_iterator(n, m.iter().zip(yf.iter()).map(|(&t, &y)| (sigmoid(t) - y) / n as f64));
        let gw = x.tr_mul(&r);
        let gb = r.sum();
        let w_new = (&zw - gw * step).map(|v| crate::linalg::soft_threshold(v, step * l1));
        let b_new = zb - step * gb;
        let delta = (&w_new - &w).amax().max((b_new - b).abs());
        // Adaptive restart: drop the momentum once it points uphill.
        let uphill = (&zw - &w_new).dot(&(&w_new - &w)) + (zb - b_new) * (b_new - b) > 0.0;
        let t_new = if uphill { 1.0 } else { (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0 };
        let mom = if uphill { 0.0 } else { (t - 1.0) / t_new };
        zw = &w_new + (&w_new - &w) * mom;
        zb = b_new + (b_new - b) * mom;
        w = w_new;
        b = b_new;
        t = t_new;
        iterations += 1;
        if delta < 1e-9 {
            break;
        }
    }
    log::debug!("l1 logistic: {iterations} iterations");
    Ok((w.iter().copied().collect(), b))
}

/// Train a classifier on the rows of `x`.
pub fn train(kind: ClassifierKind, x: &DMatrix<f64>, y: &[u8], hyper: &Hyperparams, seed: u64) -> Result<ClassifierModel> {
    check_training(x, y)?;
    let params = match kind {
        ClassifierKind::Logreg => {
            let n = x.nrows() as f64;
            let m = fit_logistic(x, y, hyper.l2 / n, 1e-7)?;
            ModelParams::Linear { coefficients: m.coefficients, intercept: m.intercept, gradient_norm: m.gradient_norm }
        }
        ClassifierKind::LogregL1 => {
            let (coefficients, intercept) = fit_logreg_l1(x, y, hyper.l1)?;
            ModelParams::Linear { coefficients, intercept, gradient_norm: f64::NAN }
        }
        ClassifierKind::RandomForest => {
            let (trees, oob_accuracy) = forest::fit_forest(x, y, hyper, seed)?;
            ModelParams::Forest { trees, oob_accuracy }
        }
    };
    Ok(ClassifierModel { kind, seed, n_features: x.ncols(), params })
}

impl ClassifierModel {
    /// `P(y = 1)` per row.
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::Dimension(format!("model expects {} features, got {}", self.n_features, x.ncols())));
        }
        Ok(match &self.params {
            ModelParams::Linear { coefficients, intercept, .. } => {
                let w = DVector::from_column_slice(coefficients);
                (x * w).iter().map(|&t| sigmoid(t + intercept)).collect()
            }
            ModelParams::Forest { trees, .. } => {
                (0..x.nrows())
                    .map(|i| {
                        let row: Vec<f64> = x.row(i).iter().copied().collect();
                        trees.iter().map(|t| t.predict_row(&row)).sum::<f64>() / trees.len() as f64
                    })
                    .collect()
            }
        })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<u8>> {
        Ok(self.predict_proba(x)?.into_iter().map(|p| u8::from(p > 0.5)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// No positive predictions: precision set to 0.
    pub precision_undefined: bool,
    /// No actual positives: recall set to 0.
    pub recall_undefined: bool,
    /// Precision + recall = 0: F1 set to 0.
    pub f1_undefined: bool,
}

/// Confusion-matrix metrics on the positive class.
pub fn evaluate(y_true: &[u8], y_pred: &[u8]) -> Result<Metrics> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension(format!("{} labels vs {} predictions", y_true.len(), y_pred.len())));
    }
    let mut m = Metrics::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (1, 1) => m.tp += 1,
            (0, 1) => m.fp += 1,
            (0, 0) => m.tn += 1,
            (1, 0) => m.fn_ += 1,
            _ => return Err(Error::InvalidInput("labels must be 0 or 1".into())),
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { None } else { Some(a as f64 / b as f64) };
    match ratio(m.tp, m.tp + m.fp) {
        Some(p) => m.precision = p,
        None => m.precision_undefined = true,
    }
    match ratio(m.tp, m.tp + m.fn_) {
        Some(r) => m.recall = r,
        None => m.recall_undefined = true,
    }
    if m.precision + m.recall > 0.0 {
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
        m.f1_undefined = true;
    }
    m.accuracy = ratio(m.tp + m.tn, y_true.len()).unwrap_or(0.0);
    Ok(m)
}

/// Rank features by descending `|coefficient|` of an L1 logistic regression.
/// The report's p-value slot holds `position / D` for features with a
/// nonzero coefficient and 1 otherwise, so it plugs into rank-based
/// evaluation. `degenerate` is set when every coefficient is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Ranking {
    pub report: FeatureReport,
    pub coefficients: Vec<f64>,
    pub degenerate: bool,
}

pub fn l1_feature_rank(data: &LabeledDataset, l1: f64) -> Result<L1Ranking> {
    let x = &data.features.values;
    let (coefficients, _) = fit_logreg_l1(x, &data.labels, l1)?;
    let d = coefficients.len();
    let mut order: Vec<usize> = (0..d).filter(|&j| coefficients[j] != 0.0).collect();
    order.sort_by(|&a, &b| coefficients[b].abs().total_cmp(&coefficients[a].abs()).then(a.cmp(&b)));
    let mut pseudo_p = vec![1.0; d];
    for (pos, &j) in order.iter().enumerate() {
        pseudo_p[j] = pos as f64 / d as f64;
    }
    let features = (0..d)
        .map(|j| FeatureResult {
            name: data.features.feature_names[j].clone(),
            index: j,
            p_value: Some(pseudo_p[j]),
            statistic: Some(coefficients[j].abs()),
            direction: if coefficients[j] > 0.0 { 1 } else if coefficients[j] < 0.0 { -1 } else { 0 },
            n_pairs: 0,
            tn: 0,
            cp: 0,
            skip_reason: None,
        })
        .collect();
    Ok(L1Ranking {
        report: FeatureReport { method: "l1".into(), config: None, features, n_tested: d, n_skipped: 0, runtime_secs: 0.0 },
        degenerate: order.is_empty(),
        coefficients,
    })
}
