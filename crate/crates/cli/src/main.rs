//! `cfs`: batch front end for causal feature selection experiments.

mod commands;
mod failure;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use failure::Kind;

#[derive(Debug, Parser)]
#[command(name = "cfs", version, about = "Causal feature selection experiments")]
pub struct Cli {
    /// Worker threads; defaults to all available cores. Results do not depend on it.
    #[arg(long, global = true, env = "CFS_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic Latent or Surface dataset with ground truth.
    SynthGen(SynthGenArgs),
    /// Rank every feature of a dataset by causal p-value.
    Select(SelectArgs),
    /// Train a classifier on selected features and report test metrics.
    Classify(ClassifyArgs),
    /// Experiments: rank correctness, nested cross-validation, lexicon profiles.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    #[arg(long)]
    pub kind: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives dataset.csv, meta.json and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Generator constants (JSON with a schema field).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset: a `.jsonl` corpus or a dense CSV with a `label` column.
    #[arg(long)]
    pub data: PathBuf,
    /// Ground-truth sidecar for CSV datasets.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Minimum document frequency for corpus vocabularies.
    #[arg(long, default_value_t = 1)]
    pub min_df: usize,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Selection config (JSON with a schema field); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the config's root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the ranked report as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Comma-separated feature names, or a report JSON filtered by --alpha.
    #[arg(long)]
    pub features: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// logreg, logreg_l1 or random_forest.
    #[arg(long, default_value = "logreg")]
    pub model: String,
    /// Hyperparameters (JSON with a schema field).
    #[arg(long)]
    pub hyper: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub min_df: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the fitted model as JSON.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Rank correctness of several methods over synthetic replicas.
    Rc(RcArgs),
    /// Leave-one-out outer / stratified k-fold inner cross-validation.
    NestedCv(NestedCvArgs),
    /// Lexicon-category profile of a report's top-ranked words.
    Profile(ProfileArgs),
    /// Stability (sb) of several methods' category profiles.
    Stability(StabilityArgs),
}

#[derive(Debug, Args)]
pub struct RcArgs {
    #[arg(long, default_value_t = 50)]
    pub replicas: usize,
    /// Comma-separated: cfs-pm, cfs-rm, cfs-nm, cfs-lm, psm, mdm, l1, cfs-<reducer><k>.
    #[arg(long)]
    pub methods: String,
    #[arg(long)]
    pub kind: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// exact or shared_model.
    #[arg(long, default_value = "exact")]
    pub refit: String,
    /// Generator constants (JSON with a schema field).
    #[arg(long)]
    pub synth_config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NestedCvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Tuning grid: `{"schema": ..., "grid": [pipeline, ...]}`.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub inner_folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long)]
    pub report: PathBuf,
    /// JSON map of word (or `prefix*`) to category list.
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub top: usize,
    /// Method label; defaults to the report's method.
    #[arg(long)]
    pub method: Option<String>,
    /// Dataset tag; defaults to the report file stem.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    /// Profile JSON files.
    #[arg(long, num_args = 1.., required = true)]
    pub profiles: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Fail unless every output hashes to the recorded value.
    #[arg(long)]
    pub check: bool,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            std::process::exit(failure::report(Kind::Usage, e.to_string().trim()));
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            std::process::exit(failure::report(Kind::Usage, "--threads must be at least 1"));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            std::process::exit(failure::report(Kind::Internal, &e.to_string()));
        }
    }
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Err(e) = commands::dispatch(cli.command, args) {
        let kind = failure::classify(&e);
        std::process::exit(failure::report(kind, &format!("{e:#}")));
    }
}

