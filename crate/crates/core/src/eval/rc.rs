use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::l1_feature_rank;
use crate::corpus::GroundTruth;
use crate::dimred::ReducerMethod;
use crate::error::{Error, Result};
use crate::matching::MatchStrategy;
use crate::select::{run_selection, FeatureReport, LatentSource, RefitMode, SelectionConfig};
use crate::seed;
use crate::stats::{paired_t_test, PairedOutcomes, TestResult};
use crate::synth::{generate, SynthConfig, SynthKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RCResult {
    pub method: String,
    pub rc: f64,
    /// 1 = X_T ranked above the sampled X_O, 0.5 = tie, 0 = below.
    pub outcomes: Vec<f64>,
    pub n_replicas: usize,
    pub replica_seeds: Vec<u64>,
    /// Column index of the irrelevant feature drawn in each replica.
    pub sampled_irrelevant: Vec<usize>,
}

/// Seed of replica `r` under `root`.
pub fn replica_seed(root: u64, r: usize) -> u64 {
    seed::derive(root, "replica", r as u64)
}

/// The irrelevant feature compared against X_T in a replica; every method
/// sees the same draw for the same replica seed.
pub fn sample_irrelevant(truth: &GroundTruth, replica_seed: u64) -> Result<usize> {
    if truth.irrelevant_indices.is_empty() {
        return Err(Error::MissingGroundTruth("no irrelevant features".into()));
    }
    let mut rng = seed::rng(seed::derive(replica_seed, "irrelevant-draw", 0));
    Ok(truth.irrelevant_indices[rng.random_range(0..truth.irrelevant_indices.len())])
}

/// 1 if X_T has the smaller p-value, 0.5 on equal p-values, else 0. A skipped
/// feature counts as p = +inf.
pub fn replica_outcome(report: &FeatureReport, treatment: usize, irrelevant: usize) -> Result<f64> {
    let p = |j: usize| -> Result<f64> {
        let f = report
            .features
            .iter()
            .find(|f| f.index == j)
            .ok_or_else(|| Error::Dimension(format!("feature {j} missing from report")))?;
        Ok(f.p_value.unwrap_or(f64::INFINITY))
    };
    let (pt, po) = (p(treatment)?, p(irrelevant)?);
    Ok(if pt < po {
        1.0
    } else if pt == po {
        0.5
    } else {
        0.0
    })
}

/// Rank correctness of one method from its per-replica reports.
pub fn rank_correctness(method: &str, reports: &[FeatureReport], truths: &[GroundTruth], seeds: &[u64]) -> Result<RCResult> {
    if reports.len() != truths.len() || reports.len() != seeds.len() {
        return Err(Error::Dimension("reports, truths and seeds must align".into()));
    }
    let mut outcomes = Vec::with_capacity(reports.len());
    let mut sampled = Vec::with_capacity(reports.len());
    for ((report, truth), &s) in reports.iter().zip(truths).zip(seeds) {
        let t = truth.treatment_index.ok_or_else(|| Error::MissingGroundTruth("no treatment index".into()))?;
        let o = sample_irrelevant(truth, s)?;
        outcomes.push(replica_outcome(report, t, o)?);
        sampled.push(o);
    }
    Ok(finish(method, outcomes, seeds.to_vec(), sampled))
}

fn finish(method: &str, outcomes: Vec<f64>, replica_seeds: Vec<u64>, sampled_irrelevant: Vec<usize>) -> RCResult {
    let n = outcomes.len();
    let rc = if n == 0 { 0.0 } else { outcomes.iter().sum::<f64>() / n as f64 };
    RCResult { method: method.to_string(), rc, outcomes, n_replicas: n, replica_seeds, sampled_irrelevant }
}

/// Paired t-test between two methods' per-replica outcomes.
pub fn compare_methods(a: &RCResult, b: &RCResult) -> Result<TestResult> {
    if a.replica_seeds != b.replica_seeds {
        return Err(Error::InvalidInput("methods were evaluated on different replicas".into()));
    }
    paired_t_test(&PairedOutcomes::new(a.outcomes.clone(), b.outcomes.clone())?)
}

/// A ranking method evaluated by the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Method {
    Cfs { name: String, config: SelectionConfig },
    L1 { name: String, penalty: f64 },
}

impl Method {
    pub fn name(&self) -> &str {
        match self {
            Method::Cfs { name, .. } | Method::L1 { name, .. } => name,
        }
    }

    fn report(&self, data: &crate::corpus::LabeledDataset, candidates: &[usize], seed: u64) -> Result<FeatureReport> {
        match self {
            Method::Cfs { config, .. } => run_selection(data, &SelectionConfig { seed, ..config.clone() }, Some(candidates)),
            Method::L1 { penalty, .. } => Ok(l1_feature_rank(data, *penalty)?.report),
        }
    }
}

/// Methods by their short names: `cfs-pm`, `cfs-rm`, `cfs-nm`, `cfs-lm`,
/// `psm`, `mdm`, `l1`, and `cfs-<reducer><k>` such as `cfs-npca50` or
/// `cfs-spca10`. `cfs-lm` matches on the provided latent matrix.
pub fn method_by_name(name: &str, refit: RefitMode) -> Result<Method> {
    let base = SelectionConfig { refit, ..Default::default() };
    let cfs = |config: SelectionConfig| Ok(Method::Cfs { name: name.to_string(), config });
    match name {
        "cfs-pm" => cfs(SelectionConfig { strategy: MatchStrategy::GroundTruth, ..base }),
        "cfs-rm" => cfs(SelectionConfig { strategy: MatchStrategy::Random, ..base }),
        "cfs-nm" => cfs(SelectionConfig { strategy: MatchStrategy::SurfaceNnm, ..base }),
        "cfs-lm" => cfs(SelectionConfig { strategy: MatchStrategy::LatentNnm, latent_source: LatentSource::Provided, ..base }),
        "psm" => cfs(SelectionConfig { strategy: MatchStrategy::Psm, ..base }),
        "mdm" => cfs(SelectionConfig { strategy: MatchStrategy::Mdm, ..base }),
        "l1" => Ok(Method::L1 { name: name.to_string(), penalty: 0.01 }),
        other => {
            let rest = other
                .strip_prefix("cfs-")
                .ok_or_else(|| Error::InvalidInput(format!("unknown method {other:?}")))?;
            let split = rest.find(|c: char| c.is_ascii_digit()).ok_or_else(|| Error::InvalidInput(format!("unknown method {other:?}")))?;
            let reducer: ReducerMethod = rest[..split].parse()?;
            let k: usize = rest[split..].parse().map_err(|_| Error::InvalidInput(format!("bad dimension in {other:?}")))?;
            cfs(SelectionConfig { strategy: MatchStrategy::LatentNnm, reducer, k, ..base })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RcExperiment {
    pub kind: SynthKind,
    pub replicas: usize,
    pub root_seed: u64,
    #[serde(default)]
    pub synth: SynthConfig,
}

/// Generate `replicas` datasets and score every method on each. Only X_T and
/// the sampled X_O are tested per replica, since rank correctness compares
/// exactly those two p-values. Replicas run in parallel.
pub fn run_rc_experiment(exp: &RcExperiment, methods: &[Method]) -> Result<Vec<RCResult>> {
    let seeds: Vec<u64> = (0..exp.replicas).map(|r| replica_seed(exp.root_seed, r)).collect();
    let per_replica: Vec<(usize, Vec<f64>)> = seeds
        .par_iter()
        .map(|&s| {
            let ds = generate(exp.kind, s, &exp.synth)?;
            let truth = ds.data.meta.clone().ok_or_else(|| Error::MissingGroundTruth("generator metadata".into()))?;
            let o = sample_irrelevant(&truth, s)?;
            let t = ds.treatment_index;
            let outcomes = methods
                .iter()
                .map(|m| {
                    let report = m.report(&ds.data, &[t, o], seed::derive(s, "method", 0))?;
                    replica_outcome(&report, t, o)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((o, outcomes))
        })
        .collect::<Result<_>>()?;
    let sampled: Vec<usize> = per_replica.iter().map(|r| r.0).collect();
    Ok(methods
        .iter()
        .enumerate()
        .map(|(m, method)| {
            let outcomes = per_replica.iter().map(|r| r.1[m]).collect();
            finish(method.name(), outcomes, seeds.clone(), sampled.clone())
        })
        .collect())
}
