//! Dimension reduction: normal PCA, sparse PCA, Gaussian random projection,
//! mini-batch dictionary learning and LDA topic models.
//!
//! A [`ReducerModel`] is fitted once and is immutable afterwards; it
//! serializes to JSON so CLI runs can cache fits.

mod dictionary;
mod grp;
mod lda;
mod pca;
mod spca;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corpus::FeatureMatrix;
use crate::error::{Error, Result};

/// N x K reduced representation.
pub type LatentMatrix = DMatrix<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducerMethod {
    Npca,
    Spca,
    Grp,
    Mbdl,
    Lda,
}

impl ReducerMethod {
    pub fn name(self) -> &'static str {
        match self {
            ReducerMethod::Npca => "npca",
            ReducerMethod::Spca => "spca",
            ReducerMethod::Grp => "grp",
            ReducerMethod::Mbdl => "mbdl",
            ReducerMethod::Lda => "lda",
        }
    }

    /// Whether `transform` is an affine map of the input.
    pub fn is_linear(self) -> bool {
        matches!(self, ReducerMethod::Npca | ReducerMethod::Spca | ReducerMethod::Grp)
    }
}

impl std::str::FromStr for ReducerMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "npca" | "pca" => Ok(ReducerMethod::Npca),
            "spca" => Ok(ReducerMethod::Spca),
            "grp" => Ok(ReducerMethod::Grp),
            "mbdl" => Ok(ReducerMethod::Mbdl),
            "lda" => Ok(ReducerMethod::Lda),
            other => Err(Error::InvalidInput(format!("unknown reducer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpcaOptions {
    pub alpha: f64,
    pub ridge_alpha: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SpcaOptions {
    fn default() -> Self {
        SpcaOptions { alpha: 1.0, ridge_alpha: 0.01, max_iter: 100, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MbdlOptions {
    pub alpha: f64,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub cd_max_sweeps: usize,
}

impl Default for MbdlOptions {
    fn default() -> Self {
        MbdlOptions { alpha: 1.0, batch_size: 32, n_epochs: 10, cd_max_sweeps: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LdaOptions {
    /// Document-topic prior; `None` means `50 / k`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub n_iters: usize,
    /// Number of final sweeps averaged into the posterior means.
    pub n_average: usize,
    /// Sweeps of held-out inference in `transform`.
    pub infer_iters: usize,
}

impl Default for LdaOptions {
    fn default() -> Self {
        LdaOptions { alpha: None, beta: 0.01, n_iters: 500, n_average: 100, infer_iters: 50 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReducerOptions {
    pub spca: SpcaOptions,
    pub mbdl: MbdlOptions,
    pub lda: LdaOptions,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub iterations: usize,
    /// Objective per iteration (epoch, sweep): reconstruction loss for the
    /// matrix methods, log-likelihood for LDA.
    pub objective: Vec<f64>,
    /// Rows that could not be represented (e.g. empty documents).
    pub degenerate_rows: Vec<usize>,
    /// Total token count after each Gibbs sweep (LDA only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub token_counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReducerParams {
    /// Mean-centered projection onto orthonormal components (k x D).
    Pca { mean: Vec<f64>, components: DMatrix<f64>, explained_variance: Vec<f64> },
    /// Unit-norm sparse loadings (k x D); transform is ridge regression.
    SparsePca { mean: Vec<f64>, components: DMatrix<f64>, ridge_alpha: f64 },
    /// Projection matrix (D x k).
    Grp { projection: DMatrix<f64> },
    /// Dictionary atoms (k x D) and the code penalty.
    Dictionary { atoms: DMatrix<f64>, alpha: f64, cd_max_sweeps: usize },
    /// Topic-word distributions (k x D), one probability vector per row.
    Lda { topic_word: DMatrix<f64>, alpha: f64, infer_iters: usize, doc_topic: DMatrix<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducerModel {
    pub method: ReducerMethod,
    pub k: usize,
    pub seed: u64,
    pub n_features: usize,
    pub params: ReducerParams,
    pub fit_stats: FitStats,
}

fn check_k(x: &DMatrix<f64>, k: usize) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::EmptyDataset);
    }
    let max_k = x.nrows().min(x.ncols());
    if k == 0 || k > max_k {
        return Err(Error::Dimension(format!("k = {k} must be in 1..={max_k}")));
    }
    Ok(())
}

/// Fit `method` with `k` components on the rows of `x`.
pub fn fit_values(
    method: ReducerMethod,
    x: &DMatrix<f64>,
    k: usize,
    seed: u64,
    opts: &ReducerOptions,
) -> Result<ReducerModel> {
    check_k(x, k)?;
    let (params, fit_stats) = match method {
        ReducerMethod::Npca => pca::fit(x, k)?,
        ReducerMethod::Spca => spca::fit(x, k, &opts.spca)?,
        ReducerMethod::Grp => grp::fit(x.ncols(), k, seed),
        ReducerMethod::Mbdl => dictionary::fit(x, k, seed, &opts.mbdl)?,
        ReducerMethod::Lda => lda::fit(x, k, seed, &opts.lda)?,
    };
    Ok(ReducerModel { method, k, seed, n_features: x.ncols(), params, fit_stats })
}

pub fn fit(method: ReducerMethod, x: &FeatureMatrix, k: usize, seed: u64, opts: &ReducerOptions) -> Result<ReducerModel> {
    fit_values(method, &x.values, k, seed, opts)
}

impl ReducerModel {
    /// Map the rows of `x` into the latent space.
    pub fn transform_values(&self, x: &DMatrix<f64>) -> Result<LatentMatrix> {
        if x.ncols() != self.n_features {
            return Err(Error::Dimension(format!(
                "model fitted on {} features, input has {}",
                self.n_features,
                x.ncols()
            )));
        }
        Ok(match &self.params {
            ReducerParams::Pca { mean, components, .. } => pca::transform(x, mean, components),
            ReducerParams::SparsePca { mean, components, ridge_alpha } => {
                spca::transform(x, mean, components, *ridge_alpha)
            }
            ReducerParams::Grp { projection } => x * projection,
            ReducerParams::Dictionary { atoms, alpha, cd_max_sweeps } => {
                dictionary::encode(x, atoms, *alpha, *cd_max_sweeps)
            }
            ReducerParams::Lda { topic_word, alpha, infer_iters, .. } => {
                lda::infer(x, topic_word, *alpha, *infer_iters, self.seed)?
            }
        })
    }

    pub fn transform(&self, x: &FeatureMatrix) -> Result<LatentMatrix> {
        self.transform_values(&x.values)
    }

    /// The training-data representation. For LDA this is the posterior mean
    /// of the fitted document-topic proportions rather than a fresh
    /// held-out inference.
    pub fn training_latent(&self, x: &DMatrix<f64>) -> Result<LatentMatrix> {
        match &self.params {
            ReducerParams::Lda { doc_topic, .. } if doc_topic.nrows() == x.nrows() => Ok(doc_topic.clone()),
            _ => self.transform_values(x),
        }
    }

    /// Linear part of an affine transform, as a D x k matrix, for the linear
    /// methods. Used to apply rank-one corrections when a column is zeroed.
    pub fn linear_map(&self) -> Option<DMatrix<f64>> {
        match &self.params {
            ReducerParams::Pca { components, .. } => Some(components.transpose()),
            ReducerParams::SparsePca { components, ridge_alpha, .. } => Some(spca::projection(components, *ridge_alpha)),
            ReducerParams::Grp { projection } => Some(projection.clone()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests;
