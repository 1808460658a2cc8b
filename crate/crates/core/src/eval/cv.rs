use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{evaluate, l1_feature_rank, train, ClassifierKind, Hyperparams, Metrics};
use crate::corpus::LabeledDataset;
use crate::error::{Error, Result};
use crate::select::{run_selection, select_by_alpha, SelectionConfig};
use crate::seed;

/// How features are chosen on a training split before the classifier sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureSelector {
    /// Keep every feature.
    All,
    /// Keep features whose selection p-value is at most `config.alpha`.
    Cfs { config: SelectionConfig },
    /// Keep features with a nonzero L1-logistic coefficient.
    L1 { penalty: f64 },
}

/// One point of the tuning grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    pub selector: FeatureSelector,
    pub classifier: ClassifierKind,
    #[serde(default)]
    pub hyper: Hyperparams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedCvResult {
    /// Metrics over the pooled outer (leave-one-out) predictions.
    pub metrics: Metrics,
    pub predictions: Vec<u8>,
    /// Grid index chosen for each outer split.
    pub chosen: Vec<usize>,
    /// How often each grid point was chosen.
    pub chosen_counts: Vec<usize>,
    pub outer_fits: usize,
    /// Outer splits where selection kept no feature and the training
    /// majority class was predicted.
    pub empty_selections: usize,
    /// Predictions (inner and outer) verified to be on rows unseen by the
    /// fit that produced them.
    pub audited_predictions: usize,
}

/// Stratified `k`-fold split: each class is shuffled and dealt round-robin.
/// Every fold's complement contains both classes when each class has at
/// least two members.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || labels.len() < k {
        return Err(Error::InvalidInput(format!("cannot split {} samples into {k} folds", labels.len())));
    }
    let mut rng = seed::rng(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 2 {
            return Err(Error::SingleClass);
        }
        idx.shuffle(&mut rng);
        for i in idx {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Records every row handed to a fit so evaluation rows can be checked
/// against it.
#[derive(Default)]
struct FitLog {
    seen: BTreeSet<usize>,
}

impl FitLog {
    fn assert_unseen(&self, rows: &[usize]) -> Result<()> {
        match rows.iter().find(|r| self.seen.contains(r)) {
            Some(r) => Err(Error::Leakage(format!("row {r} was used for fitting"))),
            None => Ok(()),
        }
    }
}

/// A fitted pipeline: either a classifier on chosen columns or a constant.
enum Fitted {
    Model { cols: Vec<usize>, model: crate::classify::ClassifierModel },
    Constant(u8),
}

fn select_columns(data: &LabeledDataset, selector: &FeatureSelector) -> Result<Vec<usize>> {
    Ok(match selector {
        FeatureSelector::All => (0..data.features.n_features()).collect(),
        FeatureSelector::Cfs { config } => {
            let report = run_selection(data, config, None)?;
            let chosen: BTreeSet<String> = select_by_alpha(&report, config.alpha).into_iter().collect();
            (0..data.features.n_features()).filter(|&j| chosen.contains(&data.features.feature_names[j])).collect()
        }
        FeatureSelector::L1 { penalty } => {
            let r = l1_feature_rank(data, *penalty)?;
            (0..r.coefficients.len()).filter(|&j| r.coefficients[j] != 0.0).collect()
        }
    })
}

fn fit_pipeline(data: &LabeledDataset, rows: &[usize], spec: &PipelineSpec, seed: u64, log: &mut FitLog) -> Result<Fitted> {
    log.seen.extend(rows.iter().copied());
    let train_set = data.subset(rows);
    let cols = select_columns(&train_set, &spec.selector)?;
    if cols.is_empty() {
        let pos = train_set.labels.iter().filter(|&&y| y == 1).count();
        return Ok(Fitted::Constant(u8::from(2 * pos >= train_set.labels.len())));
    }
    let x = train_set.features.select_columns(&cols).values;
    let model = train(spec.classifier, &x, &train_set.labels, &spec.hyper, seed)?;
    Ok(Fitted::Model { cols, model })
}

fn predict(data: &LabeledDataset, rows: &[usize], fitted: &Fitted, log: &FitLog) -> Result<Vec<u8>> {
    log.assert_unseen(rows)?;
    match fitted {
        Fitted::Constant(c) => Ok(vec![*c; rows.len()]),
        Fitted::Model { cols, model } => {
            let x = data.subset(rows).features.select_columns(cols).values;
            model.predict(&x)
        }
    }
}

/// Inner-loop F1 of one grid point on the outer training rows.
fn inner_f1(data: &LabeledDataset, outer_train: &[usize], spec: &PipelineSpec, folds: &[Vec<usize>], seed: u64) -> Result<(f64, usize)> {
    let mut y_true = Vec::new();
    let mut y_pred = Vec::new();
    for (f, dev) in folds.iter().enumerate() {
        let dev_rows: Vec<usize> = dev.iter().map(|&i| outer_train[i]).collect();
        let fit_rows: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, fold)| fold.iter().map(|&i| outer_train[i]))
            .collect();
        let mut log = FitLog::default();
        let fitted = fit_pipeline(data, &fit_rows, spec, seed::derive(seed, "inner", f as u64), &mut log)?;
        y_pred.extend(predict(data, &dev_rows, &fitted, &log)?);
        y_true.extend(dev_rows.iter().map(|&i| data.labels[i]));
    }
    Ok((evaluate(&y_true, &y_pred)?.f1, y_pred.len()))
}

/// Leave-one-out outer loop with an inner stratified `inner_folds`-fold grid
/// search maximizing F1; ties go to the earlier grid point. Outer splits run
/// in parallel. Every prediction is checked against the rows its model (and
/// the tuning that chose it) was fitted on.
pub fn nested_cv(data: &LabeledDataset, grid: &[PipelineSpec], inner_folds: usize, root_seed: u64) -> Result<NestedCvResult> {
    let n = data.n_samples();
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty tuning grid".into()));
    }
    if n < inner_folds + 1 {
        return Err(Error::InvalidInput(format!("{n} samples is too few for {inner_folds} inner folds")));
    }
    for spec in grid {
        if let FeatureSelector::Cfs { config } = &spec.selector {
            config.validate()?;
        }
    }
    let outer: Vec<(u8, usize, bool, usize)> = (0..n)
        .into_par_iter()
        .map(|test| {
            let outer_seed = seed::derive(root_seed, "outer", test as u64);
            let train_rows: Vec<usize> = (0..n).filter(|&i| i != test).collect();
            let train_labels: Vec<u8> = train_rows.iter().map(|&i| data.labels[i]).collect();
            let folds = stratified_folds(&train_labels, inner_folds, seed::derive(outer_seed, "folds", 0))?;
            let mut best = (f64::NEG_INFINITY, 0);
            let mut audited = 1;
            if grid.len() > 1 {
                for (g, spec) in grid.iter().enumerate() {
                    let (f1, n_pred) = inner_f1(data, &train_rows, spec, &folds, seed::derive(outer_seed, "grid", g as u64))?;
                    audited += n_pred;
                    if f1 > best.0 {
                        best = (f1, g);
                    }
                }
            }
            let mut log = FitLog::default();
            let fitted = fit_pipeline(data, &train_rows, &grid[best.1], seed::derive(outer_seed, "final", 0), &mut log)?;
            let pred = predict(data, &[test], &fitted, &log)?[0];
            Ok((pred, best.1, matches!(fitted, Fitted::Constant(_)), audited))
        })
        .collect::<Result<_>>()?;

    let predictions: Vec<u8> = outer.iter().map(|o| o.0).collect();
    let chosen: Vec<usize> = outer.iter().map(|o| o.1).collect();
    let empty_selections = outer.iter().filter(|o| o.2).count();
    let mut chosen_counts = vec![0; grid.len()];
    for &c in &chosen {
        chosen_counts[c] += 1;
    }
    Ok(NestedCvResult {
        metrics: evaluate(&data.labels, &predictions)?,
        predictions,
        chosen,
        chosen_counts,
        outer_fits: n,
        empty_selections,
        audited_predictions: outer.iter().map(|o| o.3).sum(),
    })
}
