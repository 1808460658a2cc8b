use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

use super::{FitStats, ReducerParams};
use crate::seed;

/// D x k matrix with i.i.d. N(0, 1/k) entries, drawn row by row.
pub(super) fn fit(d: usize, k: usize, root: u64) -> (ReducerParams, FitStats) {
    let mut rng = seed::rng(seed::derive(root, "grp", 0));
    let normal = Normal::new(0.0, (1.0 / k as f64).sqrt()).expect("finite std");
    let mut projection = DMatrix::zeros(d, k);
    for i in 0..d {
        for j in 0..k {
            projection[(i, j)] = normal.sample(&mut rng);
        }
    }
    (ReducerParams::Grp { projection }, FitStats::default())
}
