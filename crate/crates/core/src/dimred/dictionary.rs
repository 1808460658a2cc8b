use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::{FitStats, MbdlOptions, ReducerParams};
use crate::error::Result;
use crate::linalg::lasso_cd;
use crate::seed;

/// Sparse codes (N x k) of the rows of `x` against unit-norm `atoms` (k x D):
/// each row solves `min_a 0.5 |x - atoms' a|^2 + alpha |a|_1`.
pub(super) fn encode(x: &DMatrix<f64>, atoms: &DMatrix<f64>, alpha: f64, max_sweeps: usize) -> DMatrix<f64> {
    let k = atoms.nrows();
    let h = atoms * atoms.transpose();
    let c = atoms * x.transpose();
    let mut codes = DMatrix::zeros(x.nrows(), k);
    let mut a = vec![0.0; k];
    for i in 0..x.nrows() {
        a.iter_mut().for_each(|v| *v = 0.0);
        lasso_cd(&h, c.column(i).as_slice(), alpha, 0.0, &mut a, max_sweeps, 1e-6);
        for (l, &v) in a.iter().enumerate() {
            codes[(i, l)] = v;
        }
    }
    codes
}

/// Mean per-row loss `0.5 |x - atoms' a|^2 + alpha |a|_1` at the optimal codes.
fn objective(x: &DMatrix<f64>, atoms: &DMatrix<f64>, alpha: f64, max_sweeps: usize) -> f64 {
    let codes = encode(x, atoms, alpha, max_sweeps);
    let resid = x - &codes * atoms;
    let l1: f64 = codes.iter().map(|v| v.abs()).sum();
    (0.5 * resid.norm_squared() + alpha * l1) / x.nrows() as f64
}

/// Online dictionary learning with mini-batches: sparse-code a batch, add its
/// sufficient statistics to the running `A = sum a a'` and `B = sum x a'`,
/// then update each atom by block coordinate descent and project it back
/// into the unit ball.
pub(super) fn fit(x: &DMatrix<f64>, k: usize, root: u64, opts: &MbdlOptions) -> Result<(ReducerParams, FitStats)> {
    let (n, d) = x.shape();
    let mut rng = seed::rng(seed::derive(root, "mbdl", 0));

    // Initialise from k distinct data rows, normalised; zero rows are
    // replaced by random directions.
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng);
    let mut atoms = DMatrix::zeros(k, d);
    for (l, &r) in rows.iter().take(k).enumerate() {
        let mut v = x.row(r).clone_owned();
        let mut norm = v.norm();
        if norm <= 1e-12 {
            v = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(&mut rng)).transpose();
            norm = v.norm();
        }
        atoms.set_row(l, &(v / norm));
    }

    let batch = opts.batch_size.max(1);
    let mut a_acc = DMatrix::<f64>::zeros(k, k);
    let mut b_acc = DMatrix::<f64>::zeros(d, k);
    let mut trace = vec![objective(x, &atoms, opts.alpha, opts.cd_max_sweeps)];
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..opts.n_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let xb = x.select_rows(chunk);
            let codes = encode(&xb, &atoms, opts.alpha, opts.cd_max_sweeps);
            a_acc += codes.tr_mul(&codes);
            b_acc += xb.tr_mul(&codes);
            for l in 0..k {
                let all = a_acc[(l, l)];
                if all <= 1e-12 {
                    continue;
                }
                // d_l += (B_l - D A_l) / A_ll, with D the D x k atom matrix.
                let da = atoms.tr_mul(&a_acc.column(l));
                let mut col = atoms.row(l).transpose() + (b_acc.column(l) - da) / all;
                let norm = col.norm();
                if norm > 1.0 {
                    col /= norm;
                }
                atoms.set_row(l, &col.transpose());
            }
        }
        trace.push(objective(x, &atoms, opts.alpha, opts.cd_max_sweeps));
    }
    let stats = FitStats { iterations: opts.n_epochs, objective: trace, ..Default::default() };
    Ok((ReducerParams::Dictionary { atoms, alpha: opts.alpha, cd_max_sweeps: opts.cd_max_sweeps }, stats))
}
