use nalgebra::DMatrix;

use super::{FitStats, ReducerParams};
use crate::error::Result;
use crate::linalg::{center_columns, complete_orthonormal, fix_sign, sym_eigen_desc};

/// Top-`k` principal axes of `x` as rows of a k x D matrix, with their
/// variances. Uses the D x D covariance when D <= N and the N x N Gram matrix
/// otherwise.
pub(super) fn principal_axes(xc: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, Vec<f64>) {
    let (n, d) = xc.shape();
    let denom = (n.max(2) - 1) as f64;
    let mut axes = DMatrix::zeros(d, k);
    let mut variance = Vec::with_capacity(k);
    let scale_tol = 1e-12;
    let filled;
    if d <= n {
        let (vals, vecs) = sym_eigen_desc(xc.transpose() * xc);
        axes.copy_from(&vecs.columns(0, k));
        variance.extend(vals.iter().take(k).map(|v| v.max(0.0) / denom));
        filled = k;
    } else {
        let (vals, vecs) = sym_eigen_desc(xc * xc.transpose());
        let top = vals[0].max(0.0);
        let mut f = 0;
        for j in 0..k {
            if vals[j] <= scale_tol * top.max(1e-300) {
                break;
            }
            let mut v = xc.tr_mul(&vecs.column(j)) / vals[j].sqrt();
            fix_sign(v.as_mut_slice());
            axes.set_column(j, &v);
            f += 1;
        }
        for j in 0..k {
            variance.push(vals[j].max(0.0) / denom);
        }
        filled = f;
    }
    if filled < k {
        complete_orthonormal(&mut axes, filled);
        for v in variance.iter_mut().skip(filled) {
            *v = 0.0;
        }
    }
    (axes.transpose(), variance)
}

pub(super) fn fit(x: &DMatrix<f64>, k: usize) -> Result<(ReducerParams, FitStats)> {
    let (mean, xc) = center_columns(x);
    let (components, explained_variance) = principal_axes(&xc, k);
    let stats = FitStats { iterations: 1, ..Default::default() };
    Ok((ReducerParams::Pca { mean: mean.as_slice().to_vec(), components, explained_variance }, stats))
}

pub(super) fn transform(x: &DMatrix<f64>, mean: &[f64], components: &DMatrix<f64>) -> DMatrix<f64> {
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    xc * components.transpose()
}
