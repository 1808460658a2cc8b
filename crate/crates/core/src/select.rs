//! The per-feature selection loop.
//!
//! For every candidate feature: binarize it into a treatment, split the
//! samples, build a representation of the remaining features, match treated
//! to control samples, test the paired outcomes, and record the p-value.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{binarize_treatment, BinarizeRule, LabeledDataset};
use crate::dimred::{self, ReducerMethod, ReducerModel, ReducerOptions};
use crate::error::{Error, Result};
use crate::matching::{
    fit_propensity, ground_truth_match, mdm_match, nnm_match, psm_match, random_match, split_groups, MatchPairList,
    MatchStrategy, NnmOptions, SearchMode, DEFAULT_MDM_RIDGE,
};
use crate::seed;
use crate::stats::{mcnemar, paired_t_test, McNemarOptions, PairedOutcomes, TestResult};

pub const SKIP_DEGENERATE: &str = "degenerate treatment";
pub const SKIP_NO_PAIRS: &str = "no matched pairs";
pub const SKIP_NOT_CANDIDATE: &str = "not a candidate";

/// Whether the reducer is refitted for every feature or fitted once.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefitMode {
    /// Fit the reducer on all features except the treatment, per feature.
    #[default]
    Exact,
    /// Fit once on all features; zero the treatment column before
    /// transforming.
    SharedModel,
}

/// Source of the representation for `latent_nnm`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSource {
    #[default]
    Reducer,
    /// The latent matrix shipped with a synthetic dataset's ground truth.
    Provided,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeTest {
    #[default]
    Mcnemar,
    PairedT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub strategy: MatchStrategy,
    pub reducer: ReducerMethod,
    pub k: usize,
    pub latent_source: LatentSource,
    pub refit: RefitMode,
    pub beta: f64,
    pub alpha: f64,
    pub binarize: BinarizeRule,
    pub seed: u64,
    pub test: OutcomeTest,
    pub mcnemar: McNemarOptions,
    pub search: SearchMode,
    pub without_replacement: bool,
    /// Propensity model penalty on `0.5 |w|^2` against the summed log-likelihood.
    pub psm_l2: f64,
    /// Maximum propensity difference of a kept pair; `None` keeps all.
    pub psm_caliper: Option<f64>,
    /// Covariance ridge for MDM, relative to `trace(S) / D`.
    pub mdm_ridge: f64,
    pub reducer_options: ReducerOptions,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            strategy: MatchStrategy::LatentNnm,
            reducer: ReducerMethod::Npca,
            k: 50,
            latent_source: LatentSource::Reducer,
            refit: RefitMode::Exact,
            beta: 0.0,
            alpha: 0.05,
            binarize: BinarizeRule::Nonzero,
            seed: 0,
            test: OutcomeTest::Mcnemar,
            mcnemar: McNemarOptions::default(),
            search: SearchMode::Auto,
            without_replacement: false,
            psm_l2: 1.0,
            psm_caliper: None,
            mdm_ridge: DEFAULT_MDM_RIDGE,
            reducer_options: ReducerOptions::default(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if !(-1.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig(format!("beta must be in [-1, 1], got {}", self.beta)));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.psm_l2 > 0.0) {
            return Err(Error::InvalidConfig("psm_l2 must be positive".into()));
        }
        if self.psm_caliper.is_some_and(|c| c.is_nan() || c < 0.0) {
            return Err(Error::InvalidConfig("psm_caliper must be nonnegative".into()));
        }
        if !(self.mdm_ridge > 0.0) {
            return Err(Error::InvalidConfig("mdm_ridge must be positive".into()));
        }
        Ok(())
    }

    /// Short label such as `latent_nnm/npca50` or `psm`.
    pub fn label(&self) -> String {
        match (self.strategy, self.latent_source) {
            (MatchStrategy::LatentNnm, LatentSource::Reducer) => format!("latent_nnm/{}{}", self.reducer.name(), self.k),
            (MatchStrategy::LatentNnm, LatentSource::Provided) => "latent_nnm/provided".into(),
            (s, _) => s.name().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureResult {
    pub name: String,
    pub index: usize,
    pub p_value: Option<f64>,
    pub statistic: Option<f64>,
    pub direction: i8,
    pub n_pairs: usize,
    pub tn: usize,
    pub cp: usize,
    pub skip_reason: Option<String>,
}

impl FeatureResult {
    fn skipped(name: &str, index: usize, reason: impl Into<String>) -> FeatureResult {
        FeatureResult {
            name: name.to_string(),
            index,
            p_value: None,
            statistic: None,
            direction: 0,
            n_pairs: 0,
            tn: 0,
            cp: 0,
            skip_reason: Some(reason.into()),
        }
    }

    pub fn is_tested(&self) -> bool {
        self.p_value.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    /// Method label, e.g. `latent_nnm/npca50` or `l1`.
    pub method: String,
    /// Echo of the selection config; absent for non-causal baselines.
    pub config: Option<SelectionConfig>,
    /// One entry per input feature, in column order.
    pub features: Vec<FeatureResult>,
    pub n_tested: usize,
    pub n_skipped: usize,
    /// Wall time of the run. Not serialized, so reruns produce identical
    /// report files; the CLI records it in the run manifest instead.
    #[serde(skip)]
    pub runtime_secs: f64,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    feature: &'a str,
    p: Option<f64>,
    statistic: Option<f64>,
    direction: i8,
    n_pairs: usize,
    skip_reason: &'a str,
}

impl FeatureReport {
    pub fn get(&self, name: &str) -> Option<&FeatureResult> {
        self.features.iter().find(|f| f.name == name)
    }

    /// CSV in rank order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for f in rank_features(self) {
            wr.serialize(CsvRow {
                feature: &f.name,
                p: f.p_value,
                statistic: f.statistic,
                direction: f.direction,
                n_pairs: f.n_pairs,
                skip_reason: f.skip_reason.as_deref().unwrap_or(""),
            })?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Tested features by ascending p-value (ties by name), then skipped
/// features by name.
pub fn rank_features(report: &FeatureReport) -> Vec<&FeatureResult> {
    let mut out: Vec<&FeatureResult> = report.features.iter().collect();
    out.sort_by(|a, b| {
        let pa = a.p_value.unwrap_or(f64::INFINITY);
        let pb = b.p_value.unwrap_or(f64::INFINITY);
        a.is_tested()
            .cmp(&b.is_tested())
            .reverse()
            .then(pa.total_cmp(&pb))
            .then_with(|| a.name.cmp(&b.name))
    });
    out
}

/// Names of features with `p <= alpha`, in rank order.
pub fn select_by_alpha(report: &FeatureReport, alpha: f64) -> Vec<String> {
    rank_features(report)
        .into_iter()
        .filter(|f| f.p_value.is_some_and(|p| p <= alpha))
        .map(|f| f.name.clone())
        .collect()
}

/// Everything shared by the per-feature iterations.
struct Context<'a> {
    data: &'a LabeledDataset,
    cfg: &'a SelectionConfig,
    /// Input to the reducer (counts for LDA, features otherwise).
    reducer_input: &'a DMatrix<f64>,
    shared: Option<Shared>,
}

struct Shared {
    model: ReducerModel,
    /// Representation of the unmodified input, for linear reducers.
    full: Option<DMatrix<f64>>,
    /// D x k linear map, for linear reducers.
    map: Option<DMatrix<f64>>,
}

fn drop_or_zero(x: &DMatrix<f64>, j: usize) -> DMatrix<f64> {
    x.clone().remove_column(j)
}

fn zero_column(x: &DMatrix<f64>, j: usize) -> DMatrix<f64> {
    let mut z = x.clone();
    z.column_mut(j).fill(0.0);
    z
}

impl Context<'_> {
    fn latent(&self, j: usize, name: &str) -> Result<DMatrix<f64>> {
        let cfg = self.cfg;
        if cfg.latent_source == LatentSource::Provided {
            let gt = self.data.meta.as_ref().ok_or_else(|| Error::MissingGroundTruth("dataset has no metadata".into()))?;
            let latent = gt.latent.as_ref().ok_or_else(|| Error::MissingGroundTruth("dataset exposes no latent matrix".into()))?;
            // A latent coordinate that is itself the treatment is removed.
            return Ok(match gt.causal_indices.iter().position(|&c| c == j) {
                Some(pos) if pos < latent.ncols() => zero_column(latent, pos),
                _ => latent.clone(),
            });
        }
        match &self.shared {
            Some(sh) => match (&sh.full, &sh.map) {
                (Some(full), Some(map)) => {
                    // Zeroing column j removes its rank-one contribution.
                    let col = self.reducer_input.column(j);
                    Ok(full - col * map.row(j))
                }
                _ => sh.model.transform_values(&zero_column(self.reducer_input, j)),
            },
            None => {
                let x = drop_or_zero(self.reducer_input, j);
                let k = cfg.k.min(x.nrows()).min(x.ncols());
                let model = dimred::fit_values(cfg.reducer, &x, k, seed::derive_named(cfg.seed, "reducer", name), &cfg.reducer_options)?;
                model.training_latent(&x)
            }
        }
    }

    fn pairs(&self, j: usize, name: &str, treatment: &[u8]) -> Result<MatchPairList> {
        let cfg = self.cfg;
        let split = split_groups(treatment)?;
        let x = &self.data.features.values;
        let nnm = NnmOptions { beta: cfg.beta, search: cfg.search, without_replacement: cfg.without_replacement };
        match cfg.strategy {
            MatchStrategy::LatentNnm => nnm_match(&split, &self.latent(j, name)?, cfg.strategy, &nnm),
            MatchStrategy::SurfaceNnm => nnm_match(&split, &drop_or_zero(x, j), cfg.strategy, &nnm),
            MatchStrategy::Psm => {
                let rest = drop_or_zero(x, j);
                let model = fit_propensity(&rest, treatment, cfg.psm_l2)?;
                psm_match(&split, &model.scores(&rest), cfg.psm_caliper.unwrap_or(f64::INFINITY))
            }
            MatchStrategy::Mdm => mdm_match(&split, &drop_or_zero(x, j), cfg.mdm_ridge),
            MatchStrategy::Random => random_match(&split, seed::derive_named(cfg.seed, "random", name)),
            MatchStrategy::GroundTruth => {
                let gt = self.data.meta.as_ref().ok_or_else(|| Error::MissingGroundTruth("dataset has no twin map".into()))?;
                ground_truth_match(&split, &gt.twin_map)
            }
        }
    }

    fn test(&self, pairs: &MatchPairList) -> Result<TestResult> {
        let y = &self.data.labels;
        let yt: Vec<u8> = pairs.pairs.iter().map(|p| y[p.treated]).collect();
        let yc: Vec<u8> = pairs.pairs.iter().map(|p| y[p.control]).collect();
        match self.cfg.test {
            OutcomeTest::Mcnemar => mcnemar(&PairedOutcomes::new(yt, yc)?, self.cfg.mcnemar),
            OutcomeTest::PairedT => {
                let f = |v: Vec<u8>| v.into_iter().map(f64::from).collect::<Vec<f64>>();
                paired_t_test(&PairedOutcomes::new(f(yt), f(yc))?)
            }
        }
    }

    fn run_feature(&self, j: usize) -> Result<FeatureResult> {
        let name = &self.data.features.feature_names[j];
        let treatment = binarize_treatment(self.data.features.column(j), self.cfg.binarize)?;
        if treatment.degenerate {
            return Ok(FeatureResult::skipped(name, j, SKIP_DEGENERATE));
        }
        let pairs = match self.pairs(j, name, &treatment.values) {
            Ok(p) => p,
            Err(Error::DegenerateTreatment(_)) => return Ok(FeatureResult::skipped(name, j, SKIP_DEGENERATE)),
            Err(Error::Optimizer(msg)) => return Ok(FeatureResult::skipped(name, j, format!("propensity fit failed: {msg}"))),
            Err(e) => return Err(e),
        };
        let min_pairs = if self.cfg.test == OutcomeTest::PairedT { 2 } else { 1 };
        if pairs.len() < min_pairs {
            return Ok(FeatureResult::skipped(name, j, SKIP_NO_PAIRS));
        }
        let r = self.test(&pairs)?;
        Ok(FeatureResult {
            name: name.clone(),
            index: j,
            p_value: Some(r.p_value),
            statistic: Some(r.statistic),
            direction: r.direction,
            n_pairs: pairs.len(),
            tn: r.tn,
            cp: r.cp,
            skip_reason: None,
        })
    }
}

/// Run the selection loop over every feature. When `candidates` is given,
/// only those column indices are tested and the rest are reported as skipped
/// with reason [`SKIP_NOT_CANDIDATE`].
pub fn run_selection(data: &LabeledDataset, cfg: &SelectionConfig, candidates: Option<&[usize]>) -> Result<FeatureReport> {
    let start = Instant::now();
    cfg.validate()?;
    let (n, d) = data.features.values.shape();
    if n == 0 || d == 0 {
        return Err(Error::EmptyDataset);
    }
    if d < 2 {
        return Err(Error::InvalidInput("selection needs at least two features".into()));
    }
    if data.labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} samples", data.labels.len())));
    }
    let reducer_input = match (cfg.reducer, &data.counts) {
        (ReducerMethod::Lda, Some(c)) => {
            if c.values.shape() != (n, d) {
                return Err(Error::Dimension("count matrix does not align with features".into()));
            }
            &c.values
        }
        _ => &data.features.values,
    };
    let uses_reducer = cfg.strategy == MatchStrategy::LatentNnm && cfg.latent_source == LatentSource::Reducer;
    let shared = if uses_reducer && cfg.refit == RefitMode::SharedModel {
        let k = cfg.k.min(n).min(d);
        let model = dimred::fit_values(cfg.reducer, reducer_input, k, seed::derive(cfg.seed, "reducer", 0), &cfg.reducer_options)?;
        let map = model.linear_map();
        let full = match map {
            Some(_) => Some(model.transform_values(reducer_input)?),
            None => None,
        };
        Some(Shared { model, full, map })
    } else {
        None
    };
    let ctx = Context { data, cfg, reducer_input, shared };

    let mut is_candidate = vec![candidates.is_none(); d];
    if let Some(c) = candidates {
        for &j in c {
            if j >= d {
                return Err(Error::Dimension(format!("candidate {j} out of range for {d} features")));
            }
            is_candidate[j] = true;
        }
    }
    let features: Vec<FeatureResult> = (0..d)
        .into_par_iter()
        .map(|j| {
            if is_candidate[j] {
                ctx.run_feature(j)
            } else {
                Ok(FeatureResult::skipped(&data.features.feature_names[j], j, SKIP_NOT_CANDIDATE))
            }
        })
        .collect::<Result<_>>()?;
    let n_tested = features.iter().filter(|f| f.is_tested()).count();
    Ok(FeatureReport {
        method: cfg.label(),
        config: Some(cfg.clone()),
        n_skipped: d - n_tested,
        n_tested,
        features,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests;
