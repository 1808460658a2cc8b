//! Synthetic datasets with known causal structure.
//!
//! Both generators draw 250 base samples with 50 independent standard-normal
//! latent features and create a twin for each by adding Gaussian noise. The
//! first half of the samples is treated (`XT = 1`) and the twins form the
//! control half, so the twin map is the ideal matching for `XT`. Binary
//! outcomes follow a logistic model of the covariates and the treatment.
//! Irrelevant standard-normal columns `XO*` are appended; they are drawn
//! after the outcome from their own stream and never influence it.
//!
//! * **Latent**: the observed features are the latent columns themselves,
//!   then `XT`, then 10 irrelevant columns (61 features).
//! * **Surface**: 100 causal observables are linear maps of the latent
//!   features plus noise; the latent matrix is hidden from the features.
//!   Then `XT`, then 2900 irrelevant columns (3001 features).
//!
//! Random streams (latent draws, twin noise, weights, outcome draws,
//! irrelevant columns) are split from the dataset seed, so changing one block
//! of the configuration leaves the other blocks' draws untouched.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{FeatureMatrix, GroundTruth, LabeledDataset};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Latent,
    Surface,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latent" => Ok(SynthKind::Latent),
            "surface" => Ok(SynthKind::Surface),
            other => Err(Error::InvalidInput(format!("unknown dataset kind {other:?}"))),
        }
    }
}

/// Generator constants. All of them are assumptions; see `Default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Number of base samples; the dataset holds twice as many.
    pub n_base: usize,
    pub n_latent: usize,
    /// Standard deviation of the per-coordinate twin noise.
    pub twin_noise: f64,
    /// Approximate standard deviation of the covariate part of the outcome
    /// logit. Outcome weights are drawn `N(0, 1)` and scaled so that
    /// `w . z` has roughly this spread.
    pub outcome_scale: f64,
    pub treatment_weight: f64,
    pub bias: f64,
    pub latent_irrelevant: usize,
    pub surface_causal: usize,
    pub surface_irrelevant: usize,
    /// Scale of the latent-to-observable map: entries are
    /// `N(0, surface_map_scale^2 / n_latent)`.
    pub surface_map_scale: f64,
    pub surface_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_base: 250,
            n_latent: 50,
            twin_noise: 0.1,
            outcome_scale: 5.0,
            treatment_weight: 0.5,
            bias: 0.0,
            latent_irrelevant: 10,
            surface_causal: 100,
            surface_irrelevant: 2900,
            surface_map_scale: 5.0,
            surface_noise: 0.1,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_base == 0 || self.n_latent == 0 {
            return Err(Error::InvalidConfig("n_base and n_latent must be positive".into()));
        }
        let finite = [
            self.twin_noise,
            self.outcome_scale,
            self.treatment_weight,
            self.bias,
            self.surface_map_scale,
            self.surface_noise,
        ];
        if finite.iter().any(|v| !v.is_finite()) || self.twin_noise < 0.0 || self.surface_noise < 0.0 {
            return Err(Error::InvalidConfig("generator constants must be finite, noise >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub kind: SynthKind,
    pub seed: u64,
    pub data: LabeledDataset,
    pub treatment_index: usize,
    pub causal_indices: Vec<usize>,
    pub irrelevant_indices: Vec<usize>,
    /// The latent matrix, kept for oracles even when hidden from the features.
    pub latent: DMatrix<f64>,
    /// Treated index to control twin index.
    pub twin_map: Vec<(usize, usize)>,
}

/// Sidecar metadata written next to a generated dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    pub kind: SynthKind,
    pub seed: u64,
    pub config: SynthConfig,
    pub ground_truth: GroundTruth,
}

fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize, sd: f64) -> DMatrix<f64> {
    // Row-major fill so that a prefix of rows does not depend on `rows`.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let z: f64 = rng.sample(StandardNormal);
            m[(i, j)] = sd * z;
        }
    }
    m
}

fn normal_vector(rng: &mut Rng, n: usize, sd: f64) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)))
}

/// Draw binary outcomes `Y_i ~ Bernoulli(sigmoid(z_i . weights + treatment_weight * t_i + bias))`.
pub fn logistic_outcome(
    z: &DMatrix<f64>,
    weights: &[f64],
    bias: f64,
    treatment: &[u8],
    treatment_weight: f64,
    seed: u64,
) -> Result<Vec<u8>> {
    if z.ncols() != weights.len() || z.nrows() != treatment.len() {
        return Err(Error::Dimension(format!(
            "covariates {}x{}, {} weights, {} treatment values",
            z.nrows(),
            z.ncols(),
            weights.len(),
            treatment.len()
        )));
    }
    let w = DVector::from_column_slice(weights);
    let eta = z * w;
    let mut rng = seed::rng(seed);
    Ok((0..z.nrows())
        .map(|i| {
            let logit = eta[i] + treatment_weight * f64::from(treatment[i]) + bias;
            let p = sigmoid(logit);
            let u: f64 = rng.random();
            u8::from(u < p)
        })
        .collect())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Common {
    latent: DMatrix<f64>,
    treatment: Vec<u8>,
    twin_map: Vec<(usize, usize)>,
}

fn latent_with_twins(seed: u64, cfg: &SynthConfig) -> Common {
    let n = cfg.n_base;
    let base = normal_matrix(&mut seed::rng(seed::derive(seed, "latent", 0)), n, cfg.n_latent, 1.0);
    let noise = normal_matrix(
        &mut seed::rng(seed::derive(seed, "twin-noise", 0)),
        n,
        cfg.n_latent,
        cfg.twin_noise,
    );
    let mut latent = DMatrix::zeros(2 * n, cfg.n_latent);
    latent.rows_mut(0, n).copy_from(&base);
    latent.rows_mut(n, n).copy_from(&(&base + noise));
    let treatment = (0..2 * n).map(|i| u8::from(i < n)).collect();
    let twin_map = (0..n).map(|i| (i, i + n)).collect();
    Common { latent, treatment, twin_map }
}

fn assemble(
    kind: SynthKind,
    seed: u64,
    cfg: &SynthConfig,
    causal: DMatrix<f64>,
    causal_prefix: &str,
    n_irrelevant: usize,
    labels: Vec<u8>,
    common: Common,
) -> Result<SyntheticDataset> {
    let n = 2 * cfg.n_base;
    let n_causal = causal.ncols();
    let irrelevant = normal_matrix(&mut seed::rng(seed::derive(seed, "irrelevant", 0)), n, n_irrelevant, 1.0);
    let d = n_causal + 1 + n_irrelevant;
    let mut values = DMatrix::zeros(n, d);
    values.columns_mut(0, n_causal).copy_from(&causal);
    for i in 0..n {
        values[(i, n_causal)] = f64::from(common.treatment[i]);
    }
    values.columns_mut(n_causal + 1, n_irrelevant).copy_from(&irrelevant);
    let mut names: Vec<String> = (0..n_causal).map(|j| format!("{causal_prefix}{j}")).collect();
    names.push("XT".into());
    names.extend((0..n_irrelevant).map(|j| format!("XO{j}")));

    let treatment_index = n_causal;
    let causal_indices: Vec<usize> = (0..n_causal).collect();
    let irrelevant_indices: Vec<usize> = (n_causal + 1..d).collect();
    let mut data = LabeledDataset::new(FeatureMatrix::new(values, names)?, labels)?;
    data.meta = Some(GroundTruth {
        treatment_index: Some(treatment_index),
        causal_indices: causal_indices.clone(),
        irrelevant_indices: irrelevant_indices.clone(),
        twin_map: common.twin_map.clone(),
        latent: match kind {
            SynthKind::Latent => Some(common.latent.clone()),
            SynthKind::Surface => None,
        },
    });
    Ok(SyntheticDataset {
        kind,
        seed,
        data,
        treatment_index,
        causal_indices,
        irrelevant_indices,
        latent: common.latent,
        twin_map: common.twin_map,
    })
}

pub fn gen_latent_dataset(seed: u64, cfg: &SynthConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let common = latent_with_twins(seed, cfg);
    let m = cfg.n_latent;
    let w = normal_vector(
        &mut seed::rng(seed::derive(seed, "outcome-weights", 0)),
        m,
        cfg.outcome_scale / (m as f64).sqrt(),
    );
    let labels = logistic_outcome(
        &common.latent,
        w.as_slice(),
        cfg.bias,
        &common.treatment,
        cfg.treatment_weight,
        seed::derive(seed, "outcome", 0),
    )?;
    let causal = common.latent.clone();
    assemble(SynthKind::Latent, seed, cfg, causal, "L", cfg.latent_irrelevant, labels, common)
}

pub fn gen_surface_dataset(seed: u64, cfg: &SynthConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let common = latent_with_twins(seed, cfg);
    let m = cfg.n_latent;
    let c = cfg.surface_causal;
    let n = 2 * cfg.n_base;
    let map = normal_matrix(
        &mut seed::rng(seed::derive(seed, "surface-map", 0)),
        c,
        m,
        cfg.surface_map_scale / (m as f64).sqrt(),
    );
    let eps = normal_matrix(&mut seed::rng(seed::derive(seed, "surface-noise", 0)), n, c, cfg.surface_noise);
    let observed = &common.latent * map.transpose() + eps;
    // weights scaled so that v . (A l) has spread ~ outcome_scale
    let v_sd = if cfg.surface_map_scale > 0.0 {
        cfg.outcome_scale / ((c as f64).sqrt() * cfg.surface_map_scale)
    } else {
        0.0
    };
    let v = normal_vector(&mut seed::rng(seed::derive(seed, "outcome-weights", 0)), c, v_sd);
    let labels = logistic_outcome(
        &observed,
        v.as_slice(),
        cfg.bias,
        &common.treatment,
        cfg.treatment_weight,
        seed::derive(seed, "outcome", 0),
    )?;
    assemble(SynthKind::Surface, seed, cfg, observed, "XC", cfg.surface_irrelevant, labels, common)
}

pub fn generate(kind: SynthKind, seed: u64, cfg: &SynthConfig) -> Result<SyntheticDataset> {
    match kind {
        SynthKind::Latent => gen_latent_dataset(seed, cfg),
        SynthKind::Surface => gen_surface_dataset(seed, cfg),
    }
}

impl SyntheticDataset {
    pub fn meta(&self, cfg: &SynthConfig) -> SynthMeta {
        let gt = self.data.meta.clone().unwrap_or_default();
        SynthMeta { kind: self.kind, seed: self.seed, config: cfg.clone(), ground_truth: gt }
    }

    /// Write `dataset.csv` and `meta.json` into `dir`; returns their paths.
    pub fn write_to_dir(&self, dir: &Path, cfg: &SynthConfig) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let data_path = dir.join("dataset.csv");
        let meta_path = dir.join("meta.json");
        self.data.write_csv(std::io::BufWriter::new(std::fs::File::create(&data_path)?))?;
        let f = std::io::BufWriter::new(std::fs::File::create(&meta_path)?);
        serde_json::to_writer_pretty(f, &self.meta(cfg))?;
        Ok((data_path, meta_path))
    }
}

/// Load a dataset CSV and attach the ground truth from a sidecar, if given.
pub fn read_dataset(csv_path: &Path, meta_path: Option<&Path>) -> Result<LabeledDataset> {
    let mut ds = LabeledDataset::read_csv(std::io::BufReader::new(std::fs::File::open(csv_path)?))?;
    if let Some(mp) = meta_path {
        let meta: SynthMeta = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(mp)?))?;
        ds.meta = Some(meta.ground_truth);
    }
    Ok(ds)
}
