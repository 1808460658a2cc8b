//! L2-penalised logistic regression, shared by the propensity model and the
//! downstream classifier.
//!
//! The objective is the mean negative log-likelihood plus
//! `0.5 * l2 * |w|^2`; the intercept is not penalised. It is minimised with
//! L-BFGS and a More-Thuente line search.

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub l2: f64,
    pub iterations: u64,
    pub gradient_norm: f64,
}

impl LogisticModel {
    pub fn decision(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let w = DVector::from_column_slice(&self.coefficients);
        (x * w).add_scalar(self.intercept)
    }

    /// `P(y = 1 | x)` for each row.
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.decision(x).iter().map(|&t| sigmoid(t)).collect()
    }
}

/// Penalised mean log-loss over rows of `x`; parameters are `[w..., b]`.
pub struct LogisticObjective<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub l2: f64,
}

impl LogisticObjective<'_> {
    fn margins(&self, p: &[f64]) -> DVector<f64> {
        let d = self.x.ncols();
        let w = DVector::from_column_slice(&p[..d]);
        (self.x * w).add_scalar(p[d])
    }

    pub fn value(&self, p: &[f64]) -> f64 {
        let d = self.x.ncols();
        let n = self.x.nrows() as f64;
        let m = self.margins(p);
        let loss: f64 = m.iter().zip(self.y).map(|(&t, &y)| softplus(t) - y * t).sum();
        loss / n + 0.5 * self.l2 * p[..d].iter().map(|w| w * w).sum::<f64>()
    }

    pub fn gradient(&self, p: &[f64]) -> Vec<f64> {
        let d = self.x.ncols();
        let n = self.x.nrows() as f64;
        let m = self.margins(p);
        let r = DVector::from_iterator(m.len(), m.iter().zip(self.y).map(|(&t, &y)| (sigmoid(t) - y) / n));
        let gw = self.x.tr_mul(&r);
        let mut g: Vec<f64> = gw.iter().zip(&p[..d]).map(|(g, w)| g + self.l2 * w).collect();
        g.push(r.sum());
        g
    }
}

impl CostFunction for LogisticObjective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.value(p))
    }
}

impl Gradient for LogisticObjective<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, p: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        Ok(LogisticObjective::gradient(self, p))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fit an L2-penalised logistic regression of binary `y` on the rows of `x`.
/// `l2` must be positive so the optimum exists even under separation.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[u8], l2: f64, grad_tol: f64) -> Result<LogisticModel> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!("{} rows vs {} labels", x.nrows(), y.len())));
    }
    if !(l2 > 0.0) {
        return Err(Error::InvalidConfig(format!("l2 penalty must be positive, got {l2}")));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass);
    }
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let d = x.ncols();
    // Start from the intercept-only optimum.
    let rate = pos as f64 / y.len() as f64;
    let mut p0 = vec![0.0; d + 1];
    p0[d] = (rate / (1.0 - rate)).ln();

    let obj = LogisticObjective { x, y: &yf, l2 };
    let mut best = p0.clone();
    let mut iterations = 0;
    if norm(&obj.gradient(&p0)) > grad_tol {
        let solver = LBFGS::new(MoreThuenteLineSearch::new(), 10)
            .with_tolerance_grad(grad_tol)
            .and_then(|s| s.with_tolerance_cost(0.0))
            .map_err(|e| Error::Optimizer(e.to_string()))?;
        let res = Executor::new(obj, solver)
            .configure(|s| s.param(p0).max_iters(2000))
            .run()
            .map_err(|e| Error::Optimizer(e.to_string()))?;
        iterations = res.state().get_iter();
        if let Some(p) = res.state().get_best_param() {
            best = p.clone();
        }
    }
    let obj = LogisticObjective { x, y: &yf, l2 };
    let gradient_norm = norm(&obj.gradient(&best));
    let intercept = best.pop().unwrap_or(0.0);
    Ok(LogisticModel { coefficients: best, intercept, l2, iterations, gradient_norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng as _;

    fn fixture() -> (DMatrix<f64>, Vec<u8>) {
        let mut rng = seed::rng(5);
        let x = DMatrix::from_fn(20, 5, |_, _| rng.random_range(-2.0..2.0));
        let y = (0..20).map(|i| u8::from(x[(i, 0)] - 0.5 * x[(i, 2)] + rng.random_range(-1.0..1.0) > 0.0)).collect();
        (x, y)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = fixture();
        let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let obj = LogisticObjective { x: &x, y: &yf, l2: 0.3 };
        let p = vec![0.3, -0.2, 0.5, 0.1, -0.7, 0.25];
        let g = obj.gradient(&p);
        for j in 0..p.len() {
            let h = 1e-6;
            let mut a = p.clone();
            let mut b = p.clone();
            a[j] += h;
            b[j] -= h;
            let fd = (obj.value(&a) - obj.value(&b)) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1e-3), "coord {j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn optimum_has_small_gradient() {
        let (x, y) = fixture();
        let m = fit_logistic(&x, &y, 0.01, 1e-7).unwrap();
        assert!(m.gradient_norm < 1e-6, "{}", m.gradient_norm);
        assert!(m.coefficients[0] > 0.0);
        assert!(m.predict_proba(&x).iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn separable_data_stays_finite() {
        let x = DMatrix::from_column_slice(4, 1, &[-2.0, -1.0, 1.0, 2.0]);
        let m = fit_logistic(&x, &[0, 0, 1, 1], 1e-3, 1e-7).unwrap();
        assert!(m.coefficients[0].is_finite() && m.coefficients[0] > 0.0);
        assert!(m.gradient_norm < 1e-6);
    }

    #[test]
    fn zero_features_give_base_rate() {
        let x = DMatrix::zeros(10, 3);
        let y = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let m = fit_logistic(&x, &y, 1.0, 1e-8).unwrap();
        for p in m.predict_proba(&x) {
            assert!((p - 0.3).abs() < 1e-9);
        }
    }
}
