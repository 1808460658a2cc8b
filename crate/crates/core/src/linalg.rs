//! Small dense linear-algebra helpers shared by the reducers and matchers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Column means and the column-centered copy of `x`.
pub fn center_columns(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows().max(1) as f64;
    let mean = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n));
    let mut xc = x.clone();
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    (mean, xc)
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues in descending order
/// with eigenvectors as matching columns. Each eigenvector is signed so that
/// its largest-magnitude entry is positive.
pub fn sym_eigen_desc(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).clone_owned();
        fix_sign(v.as_mut_slice());
        vecs.set_column(dst, &v);
    }
    (vals, vecs)
}

pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&b| b < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Coordinate descent for `min_b 0.5 b'Hb - c'b + alpha |b|_1 + 0.5 ridge |b|^2`,
/// i.e. the lasso / elastic net with Gram matrix `H` and correlations `c`.
/// `b` holds the warm start and receives the solution.
pub fn lasso_cd(h: &DMatrix<f64>, c: &[f64], alpha: f64, ridge: f64, b: &mut [f64], max_sweeps: usize, tol: f64) {
    let k = c.len();
    for _ in 0..max_sweeps {
        let mut max_delta: f64 = 0.0;
        let mut max_b: f64 = 0.0;
        for j in 0..k {
            let hjj = h[(j, j)] + ridge;
            if hjj <= 0.0 {
                b[j] = 0.0;
                continue;
            }
            let mut r = c[j];
            for l in 0..k {
                if l != j {
                    r -= h[(j, l)] * b[l];
                }
            }
            let new = soft_threshold(r, alpha) / hjj;
            max_delta = max_delta.max((new - b[j]).abs());
            max_b = max_b.max(new.abs());
            b[j] = new;
        }
        if max_delta <= tol * max_b.max(1e-12) || max_delta == 0.0 {
            break;
        }
    }
}

/// Extend the orthonormal columns `basis[:, ..filled]` to a full orthonormal
/// set of `basis.ncols()` columns using coordinate vectors, in order.
pub fn complete_orthonormal(basis: &mut DMatrix<f64>, filled: usize) {
    let d = basis.nrows();
    let mut next = filled;
    let mut e = 0;
    while next < basis.ncols() && e < d {
        let mut v = DVector::zeros(d);
        v[e] = 1.0;
        e += 1;
        for _ in 0..2 {
            for j in 0..next {
                let bj = basis.column(j);
                let proj = bj.dot(&v);
                v.axpy(-proj, &bj, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.set_column(next, &(v / norm));
            next += 1;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lasso_cd_matches_closed_form_for_orthogonal_design() {
        let h = DMatrix::<f64>::identity(3, 3);
        let c = [3.0, -0.5, -2.0];
        let mut b = [0.0; 3];
        lasso_cd(&h, &c, 1.0, 0.0, &mut b, 100, 1e-12);
        assert_eq!(b, [2.0, 0.0, -1.0]);
    }

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 1.0]);
        let (vals, vecs) = sym_eigen_desc(m);
        assert!((vals[0] - 5.0).abs() < 1e-12 && (vals[2] - 1.0).abs() < 1e-12);
        assert!((vecs[(1, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn completion_is_orthonormal() {
        let mut b = DMatrix::zeros(4, 4);
        b.set_column(0, &DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]));
        complete_orthonormal(&mut b, 1);
        let g = b.transpose() * &b;
        assert!((g - DMatrix::identity(4, 4)).abs().max() < 1e-12);
    }
}
