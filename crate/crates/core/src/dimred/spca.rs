use nalgebra::{DMatrix, DVector};

use super::{pca::principal_axes, FitStats, ReducerParams, SpcaOptions};
use crate::error::Result;
use crate::linalg::{center_columns, lasso_cd};

/// Sparse PCA by alternating minimisation of
/// `0.5 |Xc - U V|_F^2 + alpha |V|_1` subject to `|u_l| <= 1`,
/// initialised from the leading principal components.
pub(super) fn fit(x: &DMatrix<f64>, k: usize, opts: &SpcaOptions) -> Result<(ReducerParams, FitStats)> {
    let (mean, xc) = center_columns(x);
    let (n, d) = xc.shape();
    let (axes, _) = principal_axes(&xc, k);
    let scores = &xc * axes.transpose();
    let mut u = DMatrix::zeros(n, k);
    let mut v = DMatrix::zeros(k, d);
    for l in 0..k {
        let norm = scores.column(l).norm();
        if norm > 0.0 {
            u.set_column(l, &(scores.column(l) / norm));
            v.set_row(l, &(axes.row(l) * norm));
        }
    }

    let objective = |u: &DMatrix<f64>, v: &DMatrix<f64>| {
        0.5 * (&xc - u * v).norm_squared() + opts.alpha * v.iter().map(|x| x.abs()).sum::<f64>()
    };
    let mut trace = vec![objective(&u, &v)];
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        // Loadings: one lasso per feature.
        let h = u.tr_mul(&u);
        let c = u.tr_mul(&xc);
        for j in 0..d {
            let mut b: Vec<f64> = v.column(j).iter().copied().collect();
            lasso_cd(&h, c.column(j).as_slice(), opts.alpha, 0.0, &mut b, 1000, 1e-8);
            v.set_column(j, &DVector::from_vec(b));
        }
        // Scores: block coordinate update with projection onto the unit ball.
        let a = &v * v.transpose();
        let bmat = &xc * v.transpose();
        for l in 0..k {
            if a[(l, l)] <= 1e-12 {
                continue;
            }
            let resid = bmat.column(l) - &u * a.column(l);
            let mut col = u.column(l) + resid / a[(l, l)];
            let norm = col.norm();
            if norm > 1.0 {
                col /= norm;
            }
            u.set_column(l, &col);
        }
        let obj = objective(&u, &v);
        let prev = *trace.last().unwrap();
        trace.push(obj);
        if (prev - obj).abs() <= opts.tol * prev.abs().max(1e-12) {
            break;
        }
    }

    let mut components = v;
    for mut row in components.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    let stats = FitStats { iterations, objective: trace, ..Default::default() };
    Ok((
        ReducerParams::SparsePca { mean: mean.as_slice().to_vec(), components, ridge_alpha: opts.ridge_alpha },
        stats,
    ))
}

/// D x k map `C' (C C' + r I)^-1` solving the ridge problem for each row.
pub(super) fn projection(components: &DMatrix<f64>, ridge_alpha: f64) -> DMatrix<f64> {
    let k = components.nrows();
    let gram = components * components.transpose() + DMatrix::identity(k, k) * ridge_alpha;
    let inv = gram
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| gram.pseudo_inverse(1e-12).ok())
        .unwrap_or_else(|| DMatrix::zeros(k, k));
    components.transpose() * inv
}

pub(super) fn transform(x: &DMatrix<f64>, mean: &[f64], components: &DMatrix<f64>, ridge_alpha: f64) -> DMatrix<f64> {
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    xc * projection(components, ridge_alpha)
}
