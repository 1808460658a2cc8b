use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::seed;

fn gaussian(n: usize, d: usize, s: u64) -> DMatrix<f64> {
    let mut rng = seed::rng(s);
    DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
}

/// Rank-r signal plus small noise.
fn low_rank(n: usize, d: usize, r: usize, s: u64) -> DMatrix<f64> {
    gaussian(n, r, s) * gaussian(r, d, s + 1) + gaussian(n, d, s + 2) * 0.01
}

fn reconstruct_pca(model: &ReducerModel, x: &DMatrix<f64>) -> DMatrix<f64> {
    let ReducerParams::Pca { mean, components, .. } = &model.params else { panic!("not pca") };
    let z = model.transform_values(x).unwrap();
    let mut r = z * components;
    for (j, mut col) in r.column_iter_mut().enumerate() {
        col.add_scalar_mut(mean[j]);
    }
    r
}

fn components(model: &ReducerModel) -> &DMatrix<f64> {
    match &model.params {
        ReducerParams::Pca { components, .. } | ReducerParams::SparsePca { components, .. } => components,
        _ => panic!("no components"),
    }
}

#[test]
fn pca_full_rank_reconstructs_exactly() {
    for (n, d) in [(30, 8), (8, 30)] {
        let x = gaussian(n, d, 1);
        let k = n.min(d);
        let m = fit_values(ReducerMethod::Npca, &x, k, 0, &ReducerOptions::default()).unwrap();
        let err = (reconstruct_pca(&m, &x) - &x).norm() / x.norm();
        assert!(err < 1e-9, "{n}x{d}: {err}");
    }
}

#[test]
fn pca_components_orthonormal_in_both_regimes() {
    for (n, d, k) in [(40, 12, 12), (12, 40, 12), (20, 60, 5)] {
        let x = gaussian(n, d, 3);
        let m = fit_values(ReducerMethod::Npca, &x, k, 0, &ReducerOptions::default()).unwrap();
        let c = components(&m);
        let g = c * c.transpose();
        assert!((g - DMatrix::identity(k, k)).abs().max() < 1e-6, "{n}x{d}");
    }
}

#[test]
fn pca_gram_and_covariance_paths_agree() {
    // Same data seen with D < N and, after padding rows away, D > N: compare
    // explained variances against the eigenvalues of the covariance directly.
    let x = gaussian(10, 25, 4);
    let m = fit_values(ReducerMethod::Npca, &x, 5, 0, &ReducerOptions::default()).unwrap();
    let ReducerParams::Pca { explained_variance, .. } = &m.params else { unreachable!() };
    let (_, xc) = crate::linalg::center_columns(&x);
    let cov = xc.transpose() * &xc / 9.0;
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    for j in 0..5 {
        assert!((explained_variance[j] - ev[j]).abs() < 1e-9 * ev[0]);
    }
}

#[test]
fn pca_reconstruction_error_monotone_in_k() {
    let x = gaussian(80, 60, 5);
    let mut last = f64::INFINITY;
    for k in [1, 5, 10, 25, 50] {
        let m = fit_values(ReducerMethod::Npca, &x, k, 0, &ReducerOptions::default()).unwrap();
        let err = (reconstruct_pca(&m, &x) - &x).norm_squared();
        assert!(err <= last + 1e-9, "k={k}");
        last = err;
    }
}

#[test]
fn pca_scores_are_uncorrelated() {
    let x = low_rank(60, 20, 6, 6);
    let m = fit_values(ReducerMethod::Npca, &x, 6, 0, &ReducerOptions::default()).unwrap();
    let z = m.transform_values(&x).unwrap();
    let (_, zc) = crate::linalg::center_columns(&z);
    let cov = zc.transpose() * &zc;
    for i in 0..6 {
        for j in 0..6 {
            if i != j {
                assert!(cov[(i, j)].abs() < 1e-8 * cov[(0, 0)]);
            }
        }
    }
}

#[test]
fn grp_preserves_norms_in_expectation() {
    let x = gaussian(1, 200, 7);
    let sq = x.norm_squared();
    let trials = 1000;
    let mut mean = 0.0;
    for t in 0..trials {
        let m = fit_values(ReducerMethod::Grp, &x, 1, t, &ReducerOptions::default()).unwrap();
        mean += m.transform_values(&x).unwrap().norm_squared();
    }
    mean /= trials as f64;
    assert!((mean / sq - 1.0).abs() < 0.05, "ratio {}", mean / sq);
}

#[test]
fn grp_entry_variance() {
    let x = gaussian(20, 300, 8);
    let m = fit_values(ReducerMethod::Grp, &x, 20, 1, &ReducerOptions::default()).unwrap();
    let ReducerParams::Grp { projection } = &m.params else { unreachable!() };
    let var = projection.iter().map(|v| v * v).sum::<f64>() / projection.len() as f64;
    assert!((var * 20.0 - 1.0).abs() < 0.05);
}

#[test]
fn spca_is_sparser_than_pca() {
    // Two blocks of correlated features plus noise features.
    let n = 50;
    let mut rng = seed::rng(9);
    let f = gaussian(n, 2, 10);
    let x = DMatrix::from_fn(n, 100, |i, j| {
        let e: f64 = StandardNormal.sample(&mut rng);
        match j {
            0..10 => 3.0 * f[(i, 0)] + 0.3 * e,
            10..20 => 3.0 * f[(i, 1)] + 0.3 * e,
            _ => e,
        }
    });
    let opts = ReducerOptions::default();
    let s = fit_values(ReducerMethod::Spca, &x, 2, 0, &opts).unwrap();
    let p = fit_values(ReducerMethod::Npca, &x, 2, 0, &opts).unwrap();
    let zeros = |m: &ReducerModel| components(m).iter().filter(|v| v.abs() < 1e-10).count();
    assert!(zeros(&s) > zeros(&p) + 50, "spca {} pca {}", zeros(&s), zeros(&p));
    // The sparse objective never increases.
    let obj = &s.fit_stats.objective;
    assert!(obj.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
    // Transform shape and finiteness.
    let z = s.transform_values(&x).unwrap();
    assert_eq!(z.shape(), (n, 2));
    assert!(z.iter().all(|v| v.is_finite()));
}

#[test]
fn mbdl_objective_decreases() {
    let x = low_rank(120, 30, 4, 11);
    let m = fit_values(ReducerMethod::Mbdl, &x, 6, 3, &ReducerOptions::default()).unwrap();
    let obj = &m.fit_stats.objective;
    assert_eq!(obj.len(), 11);
    assert!(obj.last().unwrap() <= &obj[0], "{obj:?}");
    let ReducerParams::Dictionary { atoms, .. } = &m.params else { unreachable!() };
    assert!(atoms.row_iter().all(|r| r.norm() <= 1.0 + 1e-9));
}

fn two_topic_corpus() -> DMatrix<f64> {
    // 20 documents over 40 words; the first 10 use words 0..20, the rest 20..40.
    let mut rng = seed::rng(12);
    let mut x = DMatrix::zeros(20, 40);
    for d in 0..20 {
        let base = if d < 10 { 0 } else { 20 };
        for _ in 0..60 {
            x[(d, base + rng.random_range(0..20))] += 1.0;
        }
    }
    x
}

fn fast_lda() -> ReducerOptions {
    ReducerOptions { lda: LdaOptions { n_iters: 200, n_average: 50, ..Default::default() }, ..Default::default() }
}

#[test]
fn lda_separates_disjoint_vocabularies() {
    let x = two_topic_corpus();
    let opts = ReducerOptions { lda: LdaOptions { alpha: Some(0.1), ..fast_lda().lda }, ..Default::default() };
    let m = fit_values(ReducerMethod::Lda, &x, 2, 5, &opts).unwrap();
    let theta = m.training_latent(&x).unwrap();
    // Each group's dominant topic.
    let dominant = |d: usize| if theta[(d, 0)] >= theta[(d, 1)] { 0 } else { 1 };
    let a = dominant(0);
    let purity_a = (0..10).filter(|&d| dominant(d) == a).count();
    let purity_b = (10..20).filter(|&d| dominant(d) != a).count();
    assert!((purity_a + purity_b) as f64 / 20.0 >= 0.9);
    // Log-likelihood improves from the random start.
    let ll = &m.fit_stats.objective;
    let head: f64 = ll[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = ll[ll.len() - 5..].iter().sum::<f64>() / 5.0;
    assert!(tail > head);
}

#[test]
fn lda_rows_on_simplex_and_tokens_conserved() {
    let mut x = two_topic_corpus();
    x.row_mut(3).fill(0.0);
    let m = fit_values(ReducerMethod::Lda, &x, 3, 1, &fast_lda()).unwrap();
    let total = x.sum() as u64;
    assert!(m.fit_stats.token_counts.iter().all(|&c| c == total));
    assert_eq!(m.fit_stats.degenerate_rows, vec![3]);
    for z in [m.training_latent(&x).unwrap(), m.transform_values(&x).unwrap()] {
        for row in z.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
        assert!(z.row(3).iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
    }
    let ReducerParams::Lda { topic_word, .. } = &m.params else { unreachable!() };
    assert!(topic_word.row_iter().all(|r| (r.sum() - 1.0).abs() < 1e-9));
}

#[test]
fn lda_single_word_corpus() {
    let x = DMatrix::from_element(5, 1, 4.0);
    let m = fit_values(ReducerMethod::Lda, &x, 1, 0, &fast_lda()).unwrap();
    let z = m.transform_values(&x).unwrap();
    assert!(z.iter().all(|&v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn lda_rejects_non_counts() {
    let x = DMatrix::from_element(3, 3, 0.5);
    assert!(matches!(
        fit_values(ReducerMethod::Lda, &x, 2, 0, &fast_lda()),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn invalid_k_and_width_rejected() {
    let x = gaussian(5, 4, 0);
    let o = ReducerOptions::default();
    assert!(fit_values(ReducerMethod::Npca, &x, 0, 0, &o).is_err());
    assert!(fit_values(ReducerMethod::Npca, &x, 5, 0, &o).is_err());
    let m = fit_values(ReducerMethod::Npca, &x, 2, 0, &o).unwrap();
    assert!(m.transform_values(&gaussian(3, 5, 0)).is_err());
}

#[test]
fn fits_are_deterministic_and_round_trip_json() {
    let x = low_rank(40, 30, 3, 13);
    let counts = two_topic_corpus();
    let o = ReducerOptions { mbdl: MbdlOptions { n_epochs: 2, ..Default::default() }, ..fast_lda() };
    for method in [ReducerMethod::Npca, ReducerMethod::Spca, ReducerMethod::Grp, ReducerMethod::Mbdl, ReducerMethod::Lda] {
        let input = if method == ReducerMethod::Lda { &counts } else { &x };
        let a = fit_values(method, input, 3, 42, &o).unwrap();
        let b = fit_values(method, input, 3, 42, &o).unwrap();
        let za = a.transform_values(input).unwrap();
        let zb = b.transform_values(input).unwrap();
        assert!(za.iter().zip(zb.iter()).all(|(p, q)| p.to_bits() == q.to_bits()), "{method:?}");
        let back: ReducerModel = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        let zc = back.transform_values(input).unwrap();
        assert!((zc - za).abs().max() < 1e-12, "{method:?}");
    }
}
