use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Parser;
use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use cfs_core::classify::{evaluate, train, ClassifierKind, Hyperparams, Metrics};
use cfs_core::corpus::{build_text_dataset, read_jsonl_file, FeatureMatrix, LabeledDataset};
use cfs_core::eval::{
    category_profile, method_by_name, nested_cv, run_rc_experiment, stability, CategoryProfile, Lexicon, NestedCvResult,
    PipelineSpec, RCResult, RcExperiment,
};
use cfs_core::select::{run_selection, select_by_alpha, FeatureReport, RefitMode, SelectionConfig};
use cfs_core::synth::{generate, read_dataset, SynthConfig, SynthKind};

use crate::failure::Failure;
use crate::manifest::{self, RunManifest};
use crate::{
    ClassifyArgs, Cli, Command, DataArgs, EvalCommand, NestedCvArgs, ProfileArgs, RcArgs, ReplayArgs, SelectArgs,
    StabilityArgs, SynthGenArgs,
};

/// What a finished command hands back for its manifest.
struct Run {
    command: &'static str,
    config: serde_json::Value,
    seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    /// Where the manifest goes.
    anchor: PathBuf,
}

pub fn dispatch(command: Command, args: Vec<String>) -> Result<()> {
    if let Command::Replay(r) = command {
        return replay(&r);
    }
    let start = Instant::now();
    let run = match command {
        Command::SynthGen(a) => synth_gen(&a)?,
        Command::Select(a) => select(&a)?,
        Command::Classify(a) => classify(&a)?,
        Command::Eval(EvalCommand::Rc(a)) => eval_rc(&a)?,
        Command::Eval(EvalCommand::NestedCv(a)) => eval_nested_cv(&a)?,
        Command::Eval(EvalCommand::Profile(a)) => eval_profile(&a)?,
        Command::Eval(EvalCommand::Stability(a)) => eval_stability(&a)?,
        Command::Replay(_) => unreachable!("handled above"),
    };
    let m = RunManifest {
        schema: manifest::SCHEMA.to_string(),
        command: run.command.to_string(),
        args,
        config: run.config,
        seeds: run.seeds,
        inputs: manifest::records(&run.inputs)?,
        outputs: manifest::records(&run.outputs)?,
        wall_time_secs: start.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let path = manifest::path_for(&run.anchor);
    manifest::write(&m, &path)?;
    info!("manifest written to {}", path.display());
    Ok(())
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let recorded = manifest::read(&a.manifest)?;
    if recorded.schema != manifest::SCHEMA {
        return Err(Failure::config(format!("unsupported manifest schema {:?}", recorded.schema)));
    }
    let argv = std::iter::once("cfs".to_string()).chain(recorded.args.iter().cloned());
    let cli = Cli::try_parse_from(argv).map_err(|e| Failure::config(format!("manifest arguments: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Failure::config("a manifest cannot replay another replay"));
    }
    for input in &recorded.inputs {
        let now = manifest::sha256_file(&input.path)?;
        if now != input.sha256 {
            return Err(Failure::data(format!("input {} changed since the recorded run", input.path.display())));
        }
    }
    dispatch(cli.command, recorded.args.clone())?;
    if a.check {
        for out in &recorded.outputs {
            if manifest::sha256_file(&out.path)? != out.sha256 {
                return Err(Failure::data(format!("output {} differs from the recorded run", out.path.display())));
            }
        }
    }
    Ok(())
}

/// Read a JSON config carrying `"schema": "cfs/1"`; unknown keys are
/// rejected by the target type.
fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let obj = value.as_object_mut().ok_or_else(|| Failure::config(format!("{}: expected a JSON object", path.display())))?;
    match obj.remove("schema") {
        Some(serde_json::Value::String(s)) if s == manifest::SCHEMA => {}
        Some(other) => return Err(Failure::config(format!("{}: unsupported schema {other}", path.display()))),
        None => return Err(Failure::config(format!("{}: missing \"schema\": \"{}\"", path.display(), manifest::SCHEMA))),
    }
    serde_json::from_value(value).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable config")
}

fn is_jsonl(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

fn load_data(path: &Path, meta: Option<&Path>, min_df: usize) -> Result<LabeledDataset> {
    let ds = if is_jsonl(path) {
        build_text_dataset(&read_jsonl_file(path)?, min_df)?
    } else {
        read_dataset(path, meta)?
    };
    info!("loaded {} samples x {} features from {}", ds.n_samples(), ds.features.n_features(), path.display());
    Ok(ds)
}

fn data_inputs(d: &DataArgs) -> Vec<PathBuf> {
    std::iter::once(d.data.clone()).chain(d.meta.clone()).collect()
}

fn synth_gen(a: &SynthGenArgs) -> Result<Run> {
    let kind: SynthKind = a.kind.parse().map_err(|e| Failure::config(format!("{e}")))?;
    let cfg: SynthConfig = a.config.as_deref().map(load_config).transpose()?.unwrap_or_default();
    let ds = generate(kind, a.seed, &cfg)?;
    let (data, meta) = ds.write_to_dir(&a.out, &cfg)?;
    Ok(Run {
        command: "synth-gen",
        config: serde_json::json!({ "kind": kind, "synth": cfg }),
        seeds: vec![a.seed],
        inputs: a.config.iter().cloned().collect(),
        outputs: vec![data, meta],
        anchor: a.out.clone(),
    })
}

fn select(a: &SelectArgs) -> Result<Run> {
    let mut cfg: SelectionConfig = a.config.as_deref().map(load_config).transpose()?.unwrap_or_default();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let data = load_data(&a.data.data, a.data.meta.as_deref(), a.data.min_df)?;
    let report = run_selection(&data, &cfg, None)?;
    info!("{} features tested, {} skipped in {:.1}s", report.n_tested, report.n_skipped, report.runtime_secs);
    write_json(&a.out, &report)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(csv) = &a.csv {
        report.write_csv(std::io::BufWriter::new(std::fs::File::create(csv)?))?;
        outputs.push(csv.clone());
    }
    let mut inputs = data_inputs(&a.data);
    inputs.extend(a.config.clone());
    Ok(Run { command: "select", config: to_value(&cfg), seeds: vec![cfg.seed], inputs, outputs, anchor: a.out.clone() })
}

/// Columns of `data` named `names`, with zeros for names it lacks.
fn aligned(data: &LabeledDataset, names: &[String]) -> Result<FeatureMatrix> {
    let index: BTreeMap<&str, usize> =
        data.features.feature_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let n = data.n_samples();
    let values = nalgebra::DMatrix::from_fn(n, names.len(), |i, j| {
        index.get(names[j].as_str()).map_or(0.0, |&c| data.features.values[(i, c)])
    });
    Ok(FeatureMatrix::new(values, names.to_vec())?)
}

#[derive(Serialize)]
struct ClassifyOutput {
    model: ClassifierKind,
    features: Vec<String>,
    n_train: usize,
    n_test: usize,
    metrics: Metrics,
}

fn classify(a: &ClassifyArgs) -> Result<Run> {
    let kind: ClassifierKind = a.model.parse().map_err(|e| Failure::config(format!("{e}")))?;
    let hyper: Hyperparams = a.hyper.as_deref().map(load_config).transpose()?.unwrap_or_default();
    let mut inputs = vec![a.train.clone(), a.test.clone()];
    let features: Vec<String> = if a.features.ends_with(".json") {
        let path = PathBuf::from(&a.features);
        let report: FeatureReport = read_json(&path)?;
        inputs.push(path);
        select_by_alpha(&report, a.alpha)
    } else {
        a.features.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
    };
    if features.is_empty() {
        return Err(Failure::data("no features selected"));
    }
    inputs.extend(a.hyper.clone());
    let train_set = load_data(&a.train, None, a.min_df)?;
    let test_set = load_data(&a.test, None, a.min_df)?;
    if let Some(missing) = features.iter().find(|f| !train_set.features.feature_names.contains(f)) {
        return Err(Failure::data(format!("feature {missing:?} is not in the training data")));
    }
    let x_train = aligned(&train_set, &features)?;
    let x_test = aligned(&test_set, &features)?;
    let model = train(kind, &x_train.values, &train_set.labels, &hyper, a.seed)?;
    let metrics = evaluate(&test_set.labels, &model.predict(&x_test.values)?)?;
    let out = ClassifyOutput { model: kind, n_train: train_set.n_samples(), n_test: test_set.n_samples(), features, metrics };
    write_json(&a.out, &out)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(p) = &a.model_out {
        write_json(p, &model)?;
        outputs.push(p.clone());
    }
    Ok(Run {
        command: "classify",
        config: serde_json::json!({ "model": kind, "hyper": hyper, "alpha": a.alpha, "features": out.features }),
        seeds: vec![a.seed],
        inputs,
        outputs,
        anchor: a.out.clone(),
    })
}

#[derive(Serialize)]
struct RcOutput<'a> {
    experiment: &'a RcExperiment,
    refit: RefitMode,
    results: Vec<RCResult>,
}

fn eval_rc(a: &RcArgs) -> Result<Run> {
    let kind: SynthKind = a.kind.parse().map_err(|e| Failure::config(format!("{e}")))?;
    let refit = match a.refit.as_str() {
        "exact" => RefitMode::Exact,
        "shared_model" | "shared" => RefitMode::SharedModel,
        other => return Err(Failure::config(format!("unknown refit mode {other:?}"))),
    };
    let methods = a
        .methods
        .split(',')
        .map(|m| method_by_name(m.trim(), refit).map_err(|e| Failure::config(format!("{e}"))))
        .collect::<Result<Vec<_>>>()?;
    if methods.is_empty() || a.replicas == 0 {
        return Err(Failure::config("need at least one method and one replica"));
    }
    let synth: SynthConfig = a.synth_config.as_deref().map(load_config).transpose()?.unwrap_or_default();
    let exp = RcExperiment { kind, replicas: a.replicas, root_seed: a.seed, synth };
    let results = run_rc_experiment(&exp, &methods)?;
    for r in &results {
        info!("{}: rc = {:.3}", r.method, r.rc);
    }
    write_json(&a.out, &RcOutput { experiment: &exp, refit, results })?;
    Ok(Run {
        command: "eval rc",
        config: serde_json::json!({ "experiment": exp, "methods": methods, "refit": refit }),
        seeds: vec![a.seed],
        inputs: a.synth_config.iter().cloned().collect(),
        outputs: vec![a.out.clone()],
        anchor: a.out.clone(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    grid: Vec<PipelineSpec>,
}

#[derive(Serialize)]
struct NestedCvOutput<'a> {
    grid: &'a [PipelineSpec],
    inner_folds: usize,
    result: NestedCvResult,
}

fn eval_nested_cv(a: &NestedCvArgs) -> Result<Run> {
    let grid: GridFile = load_config(&a.grid)?;
    let data = load_data(&a.data.data, a.data.meta.as_deref(), a.data.min_df)?;
    let result = nested_cv(&data, &grid.grid, a.inner_folds, a.seed)?;
    info!("nested cv F1 = {:.3}", result.metrics.f1);
    write_json(&a.out, &NestedCvOutput { grid: &grid.grid, inner_folds: a.inner_folds, result })?;
    let mut inputs = data_inputs(&a.data);
    inputs.push(a.grid.clone());
    Ok(Run {
        command: "eval nested-cv",
        config: serde_json::json!({ "grid": grid.grid, "inner_folds": a.inner_folds }),
        seeds: vec![a.seed],
        inputs,
        outputs: vec![a.out.clone()],
        anchor: a.out.clone(),
    })
}

fn eval_profile(a: &ProfileArgs) -> Result<Run> {
    let report: FeatureReport = read_json(&a.report)?;
    let lexicon = Lexicon::from_file(&a.lexicon)?;
    let words = CategoryProfile::top_words(&report, a.top);
    let method = a.method.clone().unwrap_or_else(|| report.method.clone());
    let dataset = match &a.dataset {
        Some(d) => d.clone(),
        None => a.report.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    let profile = category_profile(&method, &dataset, &words, &lexicon);
    write_json(&a.out, &profile)?;
    Ok(Run {
        command: "eval profile",
        config: serde_json::json!({ "top": a.top, "method": method, "dataset": dataset }),
        seeds: vec![],
        inputs: vec![a.report.clone(), a.lexicon.clone()],
        outputs: vec![a.out.clone()],
        anchor: a.out.clone(),
    })
}

fn eval_stability(a: &StabilityArgs) -> Result<Run> {
    let profiles = a.profiles.iter().map(|p| read_json::<CategoryProfile>(p)).collect::<Result<Vec<_>>>()?;
    let sb = stability(&profiles)?;
    write_json(&a.out, &serde_json::json!({ "sb": sb }))?;
    Ok(Run {
        command: "eval stability",
        config: serde_json::json!({}),
        seeds: vec![],
        inputs: a.profiles.clone(),
        outputs: vec![a.out.clone()],
        anchor: a.out.clone(),
    })
}
