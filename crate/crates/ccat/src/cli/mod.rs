//! The `ccat` command surface: features, split, train, predict, eval,
//! search. Exit codes: 0 success, 2 training divergence, 64 usage error,
//! 65 data error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_manifest, split_corpus, split_header, summary_embedding, write_manifest, UtteranceRecord};
use crate::error::{CcatError, Result};
use crate::frontend::{
    extract_features, load_features, load_wav, log_spectrogram, save_features, FeatureConfig,
};
use crate::metrics::{average_reports, evaluate_pairs, reports_to_csv, EvalPair, MetricsReport};
use crate::model::{load_checkpoint, save_checkpoint, CCATNetwork, ModelConfig};
use crate::training::{epoch_log_lines, fit, TrainConfig, TrainItem};
use crate::tuning::{
    member_predictions, run_search, SearchSpace, SpecItem, TrialBudget, TrialStatus,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DIVERGENCE: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;

#[derive(Parser, Debug)]
#[command(name = "ccat", version, about = "Non-intrusive speech quality (MOS) prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Extract feature caches for every manifest entry.
    Features(FeaturesArgs),
    /// Split a manifest into train/dev per corpus.
    Split(SplitArgs),
    /// Train a model and write the best checkpoint.
    Train(TrainArgs),
    /// Predict the MOS of one WAV file with one or more models.
    Predict(PredictArgs),
    /// Evaluate models against a labelled manifest.
    Eval(EvalArgs),
    /// Random hyper-parameter search.
    Search(SearchArgs),
}

#[derive(Args, Debug)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON config file; the `feature` section applies.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (default: CPU count).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub fraction: f64,
    #[arg(long = "out-train")]
    pub out_train: PathBuf,
    #[arg(long = "out-dev")]
    pub out_dev: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON config file with `model` and `train` sections (and optionally
    /// `feature`).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Feature cache directory to reuse (from `ccat features`).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Overrides the seed from the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Comma-separated checkpoint list; several models form an ensemble.
    #[arg(long, value_delimiter = ',')]
    pub model: Vec<PathBuf>,
    #[arg(long)]
    pub wav: PathBuf,
    /// Also print per-frame scores (single model only).
    #[arg(long)]
    pub frames: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_delimiter = ',')]
    pub model: Vec<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// One report per corpus tag plus their unweighted average.
    #[arg(long = "per-tag")]
    pub per_tag: bool,
    /// Also write the report as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    /// Search space JSON (defaults to the built-in space).
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long, default_value_t = 24)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// JSON config file; the `feature` section applies.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training epochs per trial.
    #[arg(long = "budget-epochs", default_value_t = 30)]
    pub budget_epochs: usize,
}

/// Structured configuration file: named sections, unknown keys rejected.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommandConfig {
    pub feature: Option<FeatureConfig>,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
    pub search: Option<SearchSpace>,
}

pub fn load_command_config(path: &Path) -> Result<CommandConfig> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CcatError::Config(format!("{}: {e}", path.display())))
}

fn maybe_config(path: &Option<PathBuf>) -> Result<CommandConfig> {
    match path {
        Some(p) => load_command_config(p),
        None => Ok(CommandConfig::default()),
    }
}

/// Feature config consistent with the model section: kind and context size
/// must agree.
fn resolve_feature(cfg: &CommandConfig, model: Option<&ModelConfig>) -> Result<FeatureConfig> {
    let mut feature = cfg.feature.clone().unwrap_or_default();
    if let Some(model) = model {
        if cfg.feature.is_none() {
            feature.kind = model.feature_kind;
            feature.context_half_width = (model.context_size - 1) / 2;
        } else {
            if feature.kind != model.feature_kind {
                return Err(CcatError::Config(
                    "feature.kind disagrees with model.feature_kind".into(),
                ));
            }
            if feature.context_size() != model.context_size {
                return Err(CcatError::Config(format!(
                    "feature context size {} disagrees with model context size {}",
                    feature.context_size(),
                    model.context_size
                )));
            }
        }
    }
    Ok(feature)
}

/// Manifest rows with WAV paths resolved against the manifest directory.
fn load_records(manifest: &Path) -> Result<Vec<UtteranceRecord>> {
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut records = load_manifest(manifest)?;
    for r in &mut records {
        if r.path.is_relative() {
            r.path = base.join(&r.path);
        }
    }
    Ok(records)
}

fn write_resolved_config(dir: &Path, stem: &str, value: &impl Serialize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{stem}.resolved.json"));
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| CcatError::Config(format!("config not serializable: {e}")))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

fn cache_path(out: &Path, id: &str) -> PathBuf {
    out.join(format!("{id}.ccatf"))
}

fn cache_is_fresh(cache: &Path, wav: &Path, cfg_json: &str) -> bool {
    let (Ok(cache_meta), Ok(wav_meta)) = (cache.metadata(), wav.metadata()) else {
        return false;
    };
    match (cache_meta.modified(), wav_meta.modified()) {
        (Ok(c), Ok(w)) if c >= w => {}
        _ => return false,
    }
    match crate::container::read_container(cache) {
        Ok((json, _)) => json == cfg_json,
        Err(_) => false,
    }
}

pub fn cmd_features(args: &FeaturesArgs) -> Result<()> {
    let cfg = maybe_config(&args.config)?;
    let feature = resolve_feature(&cfg, None)?;
    let records = load_records(&args.manifest)?;
    std::fs::create_dir_all(&args.out)?;
    let cfg_json = serde_json::to_string(&feature)
        .map_err(|e| CcatError::Config(format!("config not serializable: {e}")))?;
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CcatError::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<bool>> = pool.install(|| {
        records
            .par_iter()
            .map(|r| {
                let cache = cache_path(&args.out, &r.id);
                if cache_is_fresh(&cache, &r.path, &cfg_json) {
                    return Ok(false);
                }
                let wav = load_wav(&r.path)?;
                let ct = extract_features::<f32>(&wav, &feature)?;
                save_features(&cache, &feature, &ct)?;
                Ok(true)
            })
            .collect()
    });
    let mut written = 0usize;
    let mut skipped = 0usize;
    for res in results {
        if res? {
            written += 1;
        } else {
            skipped += 1;
        }
    }
    write_resolved_config(&args.out, "features", &serde_json::json!({ "feature": feature }))?;
    println!("features: {written} written, {skipped} up to date");
    Ok(())
}

pub fn cmd_split(args: &SplitArgs) -> Result<()> {
    if !(args.fraction > 0.0 && args.fraction < 1.0) {
        return Err(CcatError::Config(format!(
            "fraction {} outside (0, 1)",
            args.fraction
        )));
    }
    let records = load_records(&args.manifest)?;
    let (train, dev) = split_corpus(&records, args.fraction, |r| {
        let wav = load_wav(&r.path)?;
        Ok(summary_embedding(&wav)?.0)
    })?;
    let header = split_header(args.fraction);
    write_manifest(&args.out_train, &train, Some(&header))?;
    write_manifest(&args.out_dev, &dev, Some(&header))?;
    println!("split: {} train, {} dev", train.len(), dev.len());
    Ok(())
}

/// Features for one record: reuse a fresh matching cache when available,
/// otherwise recompute from audio.
fn item_features(
    record: &UtteranceRecord,
    feature: &FeatureConfig,
    cfg_json: &str,
    cache_dir: Option<&Path>,
) -> Result<TrainItem<f32>> {
    if let Some(dir) = cache_dir {
        let cache = cache_path(dir, &record.id);
        if cache_is_fresh(&cache, &record.path, cfg_json) {
            let (_, ct) = load_features::<f32>(&cache)?;
            return Ok(TrainItem {
                id: record.id.clone(),
                mos: record.mos,
                features: ct,
            });
        }
    }
    let wav = load_wav(&record.path)?;
    Ok(TrainItem {
        id: record.id.clone(),
        mos: record.mos,
        features: extract_features::<f32>(&wav, feature)?,
    })
}

fn load_train_items(
    records: &[UtteranceRecord],
    feature: &FeatureConfig,
    cache_dir: Option<&Path>,
) -> Result<Vec<TrainItem<f32>>> {
    let cfg_json = serde_json::to_string(feature)
        .map_err(|e| CcatError::Config(format!("config not serializable: {e}")))?;
    records
        .iter()
        .map(|r| item_features(r, feature, &cfg_json, cache_dir))
        .collect()
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = load_command_config(&args.config)?;
    let model_cfg = cfg
        .model
        .clone()
        .ok_or_else(|| CcatError::Config("config file lacks a `model` section".into()))?;
    let mut train_cfg = cfg
        .train
        .clone()
        .ok_or_else(|| CcatError::Config("config file lacks a `train` section".into()))?;
    if let Some(seed) = args.seed {
        train_cfg.seed = seed;
    }
    let feature = resolve_feature(&cfg, Some(&model_cfg))?;
    let train_records = load_records(&args.train)?;
    let dev_records = load_records(&args.dev)?;
    let cache = args.features.as_deref();
    let train_items = load_train_items(&train_records, &feature, cache)?;
    let dev_items = load_train_items(&dev_records, &feature, cache)?;

    let f_in = feature.feature_width();
    let net = CCATNetwork::<f32>::build(model_cfg.clone(), f_in, train_cfg.seed)?;
    let result = fit(net, &train_items, &dev_items, &train_cfg)?;

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_checkpoint(&result.network, &feature, &args.out)?;
    let stem = args
        .out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let out_dir = args.out.parent().map(Path::to_path_buf).unwrap_or_default();
    std::fs::write(
        out_dir.join(format!("{stem}.epochs.jsonl")),
        epoch_log_lines(&result.reports),
    )?;
    write_resolved_config(
        &out_dir,
        &stem,
        &serde_json::json!({ "feature": feature, "model": model_cfg, "train": train_cfg }),
    )?;
    for r in &result.reports {
        println!(
            "epoch {:3}  train_loss {:.6}  dev_pcc {:.4}  dev_rmse {:.4}",
            r.epoch, r.train_loss, r.dev_pcc, r.dev_rmse
        );
    }
    match (result.best_epoch, result.best_dev_pcc) {
        (Some(e), Some(p)) => println!("best epoch {e} (dev_pcc {p:.4}) -> {}", args.out.display()),
        _ => println!("wrote initial parameters -> {}", args.out.display()),
    }
    Ok(())
}

fn load_models(paths: &[PathBuf]) -> Result<Vec<(CCATNetwork<f32>, FeatureConfig)>> {
    if paths.is_empty() {
        return Err(CcatError::Config("no model checkpoints given".into()));
    }
    paths.iter().map(|p| load_checkpoint(p)).collect()
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let models = load_models(&args.model)?;
    if args.frames && models.len() > 1 {
        return Err(CcatError::Config(
            "--frames requires a single model".into(),
        ));
    }
    let wav = load_wav(&args.wav)?;
    if args.frames {
        let (net, feature) = &models[0];
        let ct = extract_features::<f32>(&wav, feature)?;
        let pred = net.predict(&ct)?;
        for score in &pred.frame_scores {
            println!("{score:.4}");
        }
        println!("{:.4}", pred.utterance_score);
    } else {
        let scores = member_predictions(&models, &wav)?;
        println!("{:.4}", crate::tuning::mean_of(&scores));
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let models = load_models(&args.model)?;
    let records = load_records(&args.manifest)?;
    if records.is_empty() {
        return Err(CcatError::Parse("manifest has no rows".into()));
    }
    let mut pairs = Vec::with_capacity(records.len());
    for r in &records {
        let wav = load_wav(&r.path)?;
        let scores = member_predictions(&models, &wav)?;
        pairs.push((
            r.corpus().to_string(),
            EvalPair {
                predicted: crate::tuning::mean_of(&scores),
                label: r.mos,
                ci95: r.ci95,
            },
        ));
    }
    let dataset = args
        .manifest
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".into());
    let reports: Vec<MetricsReport> = if args.per_tag {
        let mut tags: Vec<String> = Vec::new();
        for (tag, _) in &pairs {
            if !tags.contains(tag) {
                tags.push(tag.clone());
            }
        }
        let mut out = Vec::new();
        for tag in &tags {
            let subset: Vec<EvalPair> = pairs
                .iter()
                .filter(|(t, _)| t == tag)
                .map(|(_, p)| *p)
                .collect();
            let name = if tag.is_empty() { "untagged" } else { tag };
            out.push(evaluate_pairs(name, &subset)?);
        }
        let avg = average_reports(&out);
        out.push(avg);
        out
    } else {
        let all: Vec<EvalPair> = pairs.iter().map(|(_, p)| *p).collect();
        vec![evaluate_pairs(&dataset, &all)?]
    };

    let json = if args.per_tag {
        serde_json::to_string_pretty(&reports)
    } else {
        serde_json::to_string_pretty(&reports[0])
    }
    .map_err(|e| CcatError::Config(format!("report not serializable: {e}")))?;
    std::fs::write(&args.out, json + "\n")?;
    if let Some(csv_path) = &args.csv {
        std::fs::write(csv_path, reports_to_csv(&reports))?;
    }
    for r in &reports {
        println!(
            "{}: n={} pcc={} rmse={:.4} rmse_3rd={}",
            r.dataset,
            r.n,
            r.pcc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into()),
            r.rmse,
            r.rmse_3rd
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "n/a".into()),
        );
    }
    Ok(())
}

pub fn cmd_search(args: &SearchArgs) -> Result<()> {
    let cfg = maybe_config(&args.config)?;
    let space: SearchSpace = match &args.space {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| CcatError::Config(format!("{}: {e}", path.display())))?
        }
        None => cfg.search.clone().unwrap_or_default(),
    };
    let mut feature = cfg.feature.clone().unwrap_or_default();
    feature.kind = space.feature_kind;
    let train_records = load_records(&args.train)?;
    let dev_records = load_records(&args.dev)?;
    let load_specs = |records: &[UtteranceRecord]| -> Result<Vec<SpecItem>> {
        records
            .iter()
            .map(|r| {
                let wav = load_wav(&r.path)?;
                Ok(SpecItem {
                    id: r.id.clone(),
                    mos: r.mos,
                    spec: log_spectrogram::<f32>(&wav, &feature)?,
                })
            })
            .collect()
    };
    let train_specs = load_specs(&train_records)?;
    let dev_specs = load_specs(&dev_records)?;
    let budget = TrialBudget {
        max_epochs: args.budget_epochs,
        early_stop_patience: args.budget_epochs,
    };
    let trials = run_search(
        &space,
        args.trials,
        &train_specs,
        &dev_specs,
        &feature,
        budget,
        args.seed,
        Some(&args.out),
    )?;
    write_resolved_config(
        &args.out,
        "search",
        &serde_json::json!({ "feature": feature, "search": space, "trials": args.trials, "seed": args.seed }),
    )?;
    for t in &trials {
        match t.status {
            TrialStatus::Done => println!(
                "trial {:3}  dev_pcc {:.4}  dev_rmse {:.4}  C={} filters={} encoders={}",
                t.trial_id,
                t.dev_pcc.unwrap_or(f64::NAN),
                t.dev_rmse.unwrap_or(f64::NAN),
                t.model.context_size,
                t.model.conv_filters,
                t.model.num_encoders
            ),
            TrialStatus::Diverged => println!("trial {:3}  diverged", t.trial_id),
        }
    }
    Ok(())
}

/// Map an error to the documented exit code.
pub fn exit_code_for(err: &CcatError) -> i32 {
    match err {
        CcatError::Divergence(_) => EXIT_DIVERGENCE,
        CcatError::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Run a parsed command, mapping errors to exit codes.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Features(args) => cmd_features(args),
        Command::Split(args) => cmd_split(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Search(args) => cmd_search(args),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
