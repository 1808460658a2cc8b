use nalgebra::DMatrix;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use super::*;
use crate::corpus::FeatureMatrix;
use crate::synth::{gen_latent_dataset, SynthConfig};

fn fixture(n: usize, d: usize, s: u64) -> LabeledDataset {
    let mut rng = seed::rng(s);
    let x = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
    let labels = (0..n).map(|i| u8::from(x[(i, 0)] + 0.5 * x[(i, 1)] > 0.0)).collect();
    let names = (0..d).map(|j| format!("f{j:02}")).collect();
    LabeledDataset::new(FeatureMatrix::new(x, names).unwrap(), labels).unwrap()
}

/// Straight-line reimplementation of the loop for `surface`-style cosine
/// matching on the centred remaining features.
fn oracle_p_values(data: &LabeledDataset) -> Vec<f64> {
    let x = &data.features.values;
    let (n, d) = x.shape();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut out = Vec::new();
    for t in 0..d {
        let treated: Vec<usize> = (0..n).filter(|&i| x[(i, t)] > 0.0).collect();
        let control: Vec<usize> = (0..n).filter(|&i| x[(i, t)] <= 0.0).collect();
        let cols: Vec<usize> = (0..d).filter(|&j| j != t).collect();
        let means: Vec<f64> = cols.iter().map(|&j| (0..n).map(|i| x[(i, j)]).sum::<f64>() / n as f64).collect();
        let row = |i: usize| -> Vec<f64> { cols.iter().zip(&means).map(|(&j, m)| x[(i, j)] - m).collect() };
        let cos = |a: &[f64], b: &[f64]| {
            let ab: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
            let aa: f64 = a.iter().map(|p| p * p).sum();
            let bb: f64 = b.iter().map(|p| p * p).sum();
            ab / (aa.sqrt() * bb.sqrt())
        };
        let (mut b, mut c) = (0.0f64, 0.0f64);
        for &i in &treated {
            let ri = row(i);
            let mut best = (usize::MAX, f64::NEG_INFINITY);
            for &k in &control {
                let s = cos(&ri, &row(k));
                if s > best.1 {
                    best = (k, s);
                }
            }
            if best.1 > 0.0 {
                match (data.labels[i], data.labels[best.0]) {
                    (0, 1) => c += 1.0,
                    (1, 0) => b += 1.0,
                    _ => {}
                }
            }
        }
        let chi = if b + c > 0.0 { (b - c).powi(2) / (b + c) } else { 0.0 };
        // chi-square(1) tail as a two-sided normal tail.
        out.push(2.0 * (1.0 - normal.cdf(chi.sqrt())));
    }
    out
}

#[test]
fn full_rank_pca_pipeline_matches_straight_line_oracle() {
    let data = fixture(30, 6, 1);
    let cfg = SelectionConfig { k: 5, search: SearchMode::BruteForce, ..Default::default() };
    let report = run_selection(&data, &cfg, None).unwrap();
    let oracle = oracle_p_values(&data);
    for (f, p) in report.features.iter().zip(oracle) {
        assert!((f.p_value.unwrap() - p).abs() < 1e-9, "{}: {:?} vs {p}", f.name, f.p_value);
    }
}

#[test]
fn degenerate_feature_is_skipped_and_counts_add_up() {
    let mut data = fixture(40, 5, 2);
    data.features.values.column_mut(3).fill(0.0);
    let report = run_selection(&data, &SelectionConfig { k: 3, ..Default::default() }, None).unwrap();
    assert_eq!(report.features[3].skip_reason.as_deref(), Some(SKIP_DEGENERATE));
    assert_eq!(report.n_tested + report.n_skipped, 5);
    assert_eq!(report.n_skipped, 1);
    assert_eq!(rank_features(&report).last().unwrap().name, "f03");
}

#[test]
fn ground_truth_on_latent_is_reproducible() {
    let ds = gen_latent_dataset(4, &SynthConfig::default()).unwrap();
    let cfg = SelectionConfig { strategy: MatchStrategy::GroundTruth, ..Default::default() };
    let t = ds.treatment_index;
    let a = run_selection(&ds.data, &cfg, Some(&[t])).unwrap();
    let b = run_selection(&ds.data, &cfg, Some(&[t])).unwrap();
    assert_eq!(a.features, b.features);
    let xt = &a.features[t];
    assert_eq!(xt.n_pairs, 250);
    assert!(xt.p_value.is_some());
    assert!(a.features.iter().filter(|f| f.index != t).all(|f| f.skip_reason.as_deref() == Some(SKIP_NOT_CANDIDATE)));
}

#[test]
fn schedule_independent() {
    let data = fixture(60, 8, 5);
    let cfg = SelectionConfig { k: 4, strategy: MatchStrategy::LatentNnm, reducer: ReducerMethod::Grp, ..Default::default() };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| run_selection(&data, &cfg, None).unwrap())
    };
    let a = run(1);
    let b = run(4);
    for (x, y) in a.features.iter().zip(&b.features) {
        assert_eq!(x.p_value.map(f64::to_bits), y.p_value.map(f64::to_bits));
        assert_eq!(x, y);
    }
}

#[test]
fn shared_model_rank_one_update_equals_zeroed_transform() {
    let data = fixture(40, 7, 6);
    for reducer in [ReducerMethod::Npca, ReducerMethod::Spca, ReducerMethod::Grp] {
        let cfg = SelectionConfig { k: 3, reducer, refit: RefitMode::SharedModel, ..Default::default() };
        let x = &data.features.values;
        let model = dimred::fit_values(reducer, x, 3, seed::derive(cfg.seed, "reducer", 0), &cfg.reducer_options).unwrap();
        let map = model.linear_map();
        let full = model.transform_values(x).unwrap();
        let ctx = Context { data: &data, cfg: &cfg, reducer_input: x, shared: Some(Shared { model: model.clone(), full: Some(full), map }) };
        for j in 0..7 {
            let fast = ctx.latent(j, "").unwrap();
            let slow = model.transform_values(&zero_column(x, j)).unwrap();
            assert!((fast - slow).abs().max() < 1e-10, "{reducer:?} column {j}");
        }
    }
}

#[test]
fn column_permutation_permutes_report() {
    let data = fixture(50, 6, 7);
    let perm = [3usize, 0, 5, 1, 4, 2];
    let x = &data.features.values;
    let px = DMatrix::from_fn(50, 6, |i, j| x[(i, perm[j])]);
    let names = perm.iter().map(|&p| data.features.feature_names[p].clone()).collect();
    let pdata = LabeledDataset::new(FeatureMatrix::new(px, names).unwrap(), data.labels.clone()).unwrap();
    for strategy in [MatchStrategy::Random, MatchStrategy::SurfaceNnm, MatchStrategy::Mdm, MatchStrategy::Psm] {
        let cfg = SelectionConfig { strategy, ..Default::default() };
        let a = run_selection(&data, &cfg, None).unwrap();
        let b = run_selection(&pdata, &cfg, None).unwrap();
        for (j, &p) in perm.iter().enumerate() {
            let (fa, fb) = (&a.features[p], &b.features[j]);
            assert_eq!(fa.name, fb.name);
            assert_eq!((fa.n_pairs, fa.tn, fa.cp), (fb.n_pairs, fb.tn, fb.cp), "{strategy:?} {}", fa.name);
        }
    }
}

#[test]
fn config_validation() {
    let data = fixture(20, 3, 8);
    for bad in [
        SelectionConfig { alpha: 0.0, ..Default::default() },
        SelectionConfig { alpha: 1.0, ..Default::default() },
        SelectionConfig { beta: 1.5, ..Default::default() },
        SelectionConfig { k: 0, ..Default::default() },
    ] {
        assert!(matches!(run_selection(&data, &bad, None), Err(Error::InvalidConfig(_))));
    }
    let json = r#"{"strategy": "psm", "alpha": 0.1, "bogus": 1}"#;
    assert!(serde_json::from_str::<SelectionConfig>(json).is_err());
}

#[test]
fn report_csv_and_json() {
    let data = fixture(30, 4, 9);
    let report = run_selection(&data, &SelectionConfig { k: 2, ..Default::default() }, None).unwrap();
    let back: FeatureReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(back.features, report.features);
    assert_eq!(back.config, report.config);
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("feature,p,statistic,direction,n_pairs"));
    assert_eq!(text.lines().count(), 5);
}

fn synthetic_report(ps: &[Option<f64>]) -> FeatureReport {
    let features = ps
        .iter()
        .enumerate()
        .map(|(i, &p)| FeatureResult {
            name: format!("w{i}"),
            index: i,
            p_value: p,
            statistic: p.map(|_| 0.0),
            direction: 0,
            n_pairs: 1,
            tn: 0,
            cp: 0,
            skip_reason: p.is_none().then(|| SKIP_DEGENERATE.to_string()),
        })
        .collect();
    FeatureReport { method: "test".into(), config: None, features, n_tested: 0, n_skipped: 0, runtime_secs: 0.0 }
}

#[test]
fn ranking_examples() {
    let r = synthetic_report(&[Some(0.5), Some(0.01), None, Some(0.01)]);
    let names: Vec<&str> = rank_features(&r).iter().map(|f| f.name.as_str()).collect();
    assert_eq!(names, ["w1", "w3", "w0", "w2"]);
    assert_eq!(select_by_alpha(&r, 1.0), ["w1", "w3", "w0"]);
    assert!(select_by_alpha(&r, 0.0).is_empty());
}

proptest! {
    #[test]
    fn alpha_selection_is_monotone(ps in prop::collection::vec(prop::option::of(0.0f64..1.0), 1..40), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let r = synthetic_report(&ps);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = select_by_alpha(&r, lo);
        let large = select_by_alpha(&r, hi);
        prop_assert!(small.iter().all(|n| large.contains(n)));
        for n in &large {
            let p = r.get(n).unwrap().p_value.unwrap();
            prop_assert!(p <= hi);
        }
    }
}

#[test]
fn beta_gate_never_adds_pairs_per_feature() {
    let data = fixture(60, 5, 10);
    let mut last: Option<Vec<usize>> = None;
    for beta in [-1.0, -0.5, 0.0, 0.3, 0.6, 0.9] {
        let cfg = SelectionConfig { strategy: MatchStrategy::SurfaceNnm, beta, ..Default::default() };
        let r = run_selection(&data, &cfg, None).unwrap();
        let n: Vec<usize> = r.features.iter().map(|f| f.n_pairs).collect();
        if let Some(prev) = &last {
            assert!(n.iter().zip(prev).all(|(a, b)| a <= b));
        }
        last = Some(n);
    }
}
