//! Command-line front end: `gen-data`, `train`, `eval`, `predict`, `params`.
//!
//! Every command writes into a fresh `--out` directory (an existing non-empty
//! one needs `--force`, which clears it) and leaves exactly one
//! `manifest.json` there. Manifests hold no timestamps, so identical inputs
//! give byte-identical output directories.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::data::synthetic::{generate, SyntheticSpec};
use crate::data::{content_hash, load_dataset, write_dataset, write_predictions, AnnotatedSample, PredictionRecord};
use crate::error::{Error, Result};
use crate::gradcheck::module_of;
use crate::loss::LossBreakdown;
use crate::metrics::MetricsReport;
use crate::model::MhDetr;
use crate::plot::{render_svg, PlotInput};
use crate::trainer::{evaluate_model, predict_all, split_indices, EpochLog, Trainer};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "mhdetr", version, about = "Moment retrieval and highlight detection")]
pub struct Cli {
    /// Repeat for more log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (annotations JSONL + FPK1 features).
    GenData(GenDataArgs),
    /// Train a model; writes checkpoints, loss and metric logs.
    Train(TrainArgs),
    /// Evaluate a checkpoint; writes metrics JSON and a text table.
    Eval(EvalArgs),
    /// Write predictions JSONL and optional SVG plots.
    Predict(PredictArgs),
    /// Print trainable parameter counts per module.
    Params(ParamsArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// TOML file with synthetic-data settings; defaults when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// TOML config; written with every default when the file does not exist yet.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Module ablation row 1..=5 (5 is the full model).
    #[arg(long)]
    pub module_ablation: Option<usize>,
    /// Loss ablation row 1..=7 (7 uses every term).
    #[arg(long)]
    pub loss_ablation: Option<usize>,
    #[arg(long)]
    pub ablate_encoder: bool,
    #[arg(long)]
    pub ablate_fusion: bool,
    #[arg(long)]
    pub ablate_decoder: bool,
    #[arg(long)]
    pub no_bce: bool,
    #[arg(long)]
    pub no_rank: bool,
    #[arg(long)]
    pub no_l1: bool,
    #[arg(long)]
    pub no_iou: bool,
    #[arg(long)]
    pub no_cls: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    /// Also write one SVG per sample under `plots/`.
    #[arg(long)]
    pub plot: bool,
    /// Predicted spans drawn per plot.
    #[arg(long, default_value_t = 3)]
    pub plot_top_k: usize,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

/// Record of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config: Option<Config>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub synthetic_spec: Option<SyntheticSpec>,
    /// Input name → SHA-256 content hash.
    pub inputs: BTreeMap<String, String>,
    pub metric_history: Vec<EpochLog>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<MetricsReport>,
    /// Output name → path relative to the run directory.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(command: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: None,
            synthetic_spec: None,
            inputs: BTreeMap::new(),
            metric_history: Vec::new(),
            metrics: None,
            outputs: BTreeMap::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(dir.join(MANIFEST))?)?)
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join(MANIFEST), text)?;
        Ok(())
    }
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::config(format!("{} exists and is not a directory", dir.display())));
        }
        if std::fs::read_dir(dir)?.next().is_some() {
            if !force {
                return Err(Error::config(format!("{} is not empty; pass --force to overwrite", dir.display())));
            }
            std::fs::remove_dir_all(dir)?;
        }
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

pub fn gen_data(a: &GenDataArgs) -> Result<RunManifest> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::config(format!("{}: {e}", p.display())))?;
            toml::from_str::<SyntheticSpec>(&text).map_err(|e| Error::config(format!("{}: {e}", p.display())))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(n) = a.n_samples {
        spec.n_samples = n;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let samples = generate(&spec)?;
    prepare_out(&a.out, a.force)?;
    write_dataset(&a.out, &samples)?;
    let mut m = RunManifest::new("gen-data", spec.seed);
    m.inputs.insert("dataset".into(), content_hash(&a.out)?);
    m.synthetic_spec = Some(spec);
    m.outputs.insert("annotations".into(), crate::data::ANNOTATIONS.into());
    m.outputs.insert("video_features".into(), crate::data::VIDEO_DIR.into());
    m.outputs.insert("text_features".into(), crate::data::TEXT_DIR.into());
    m.write(&a.out)?;
    info!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok(m)
}

/// Loads the config file, or writes the full default dump there first.
pub fn load_or_init_config(path: Option<&Path>) -> Result<Config> {
    let Some(p) = path else {
        return Ok(Config::default());
    };
    if p.exists() {
        let text = std::fs::read_to_string(p)?;
        return Config::from_toml(&text);
    }
    if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let cfg = Config::default();
    write_text(p, &cfg.to_toml())?;
    info!("wrote default config to {}", p.display());
    Ok(cfg)
}

/// Feature widths come from the data; lengths must fit the position tables.
fn fit_config_to_data(cfg: &mut Config, data: &[AnnotatedSample]) -> Result<()> {
    let first = data.first().ok_or_else(|| Error::data("dataset is empty"))?;
    let (dv, dt) = (first.video.dim(), first.text.dim());
    if let Some(s) = data.iter().find(|s| s.video.dim() != dv || s.text.dim() != dt) {
        return Err(Error::data(format!("qid {}: feature widths differ from the first sample", s.qid())));
    }
    if cfg.model.video_dim != dv || cfg.model.text_dim != dt {
        info!("feature widths from data: video {dv}, text {dt}");
        cfg.model.video_dim = dv;
        cfg.model.text_dim = dt;
    }
    let lv = data.iter().map(|s| s.video.len()).max().unwrap_or(0);
    if lv > cfg.model.max_video_len {
        return Err(Error::config(format!("videos have up to {lv} clips but max_video_len is {}", cfg.model.max_video_len)));
    }
    Ok(())
}

fn check_compatible(model: &MhDetr, data: &[AnnotatedSample]) -> Result<()> {
    let c = &model.config;
    for s in data {
        if s.video.dim() != c.video_dim || s.text.dim() != c.text_dim {
            return Err(Error::config(format!(
                "qid {}: features are {}/{} wide but the checkpoint expects {}/{}",
                s.qid(),
                s.video.dim(),
                s.text.dim(),
                c.video_dim,
                c.text_dim
            )));
        }
        if s.video.len() > c.max_video_len {
            return Err(Error::config(format!("qid {}: {} clips exceed max_video_len {}", s.qid(), s.video.len(), c.max_video_len)));
        }
    }
    Ok(())
}

pub fn apply_train_overrides(cfg: &mut Config, a: &TrainArgs) -> Result<()> {
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if a.max_steps.is_some() {
        cfg.train.max_steps = a.max_steps;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.val_fraction {
        cfg.train.val_fraction = v;
    }
    if let Some(r) = a.module_ablation {
        cfg.apply_module_ablation(r)?;
    }
    if let Some(r) = a.loss_ablation {
        cfg.apply_loss_ablation(r)?;
    }
    let m = &mut cfg.model;
    m.use_encoder &= !a.ablate_encoder;
    m.use_fusion &= !a.ablate_fusion;
    m.use_decoder &= !a.ablate_decoder;
    let l = &mut cfg.loss;
    l.use_bce &= !a.no_bce;
    l.use_rank &= !a.no_rank;
    l.use_l1 &= !a.no_l1;
    l.use_iou &= !a.no_iou;
    l.use_cls &= !a.no_cls;
    cfg.validate()
}

#[derive(Serialize)]
struct StepLog<'a> {
    step: usize,
    #[serde(flatten)]
    loss: &'a LossBreakdown,
}

pub fn train(a: &TrainArgs) -> Result<RunManifest> {
    let mut cfg = load_or_init_config(a.config.as_deref())?;
    apply_train_overrides(&mut cfg, a)?;
    let data = load_dataset(&a.data, &cfg.data)?;
    fit_config_to_data(&mut cfg, &data)?;
    prepare_out(&a.out, a.force)?;

    let (train_idx, val_idx) = split_indices(data.len(), cfg.train.val_fraction, cfg.train.seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    let (train_set, val_set) = (pick(&train_idx), pick(&val_idx));
    info!("training on {} samples, validating on {}", train_set.len(), val_set.len());

    let mut trainer = Trainer::new(cfg.clone())?;
    info!("{} trainable parameters", trainer.model.num_params());
    let report = trainer.fit(&train_set, &val_set, &mut |_| {})?;

    let mut losses = String::new();
    for (i, l) in report.losses.iter().enumerate() {
        losses.push_str(&serde_json::to_string(&StepLog { step: i + 1, loss: l })?);
        losses.push('\n');
    }
    write_text(&a.out.join("losses.jsonl"), &losses)?;
    let mut epochs = String::new();
    for e in &report.epochs {
        epochs.push_str(&serde_json::to_string(e)?);
        epochs.push('\n');
    }
    write_text(&a.out.join("metrics.jsonl"), &epochs)?;
    write_text(&a.out.join("config.toml"), &cfg.to_toml())?;
    trainer.checkpoint().save(&a.out.join("last.ckpt"))?;
    report.best.as_ref().expect("fit returns a best state").save(&a.out.join("best.ckpt"))?;

    let mut m = RunManifest::new("train", cfg.train.seed);
    m.inputs.insert("data".into(), content_hash(&a.data)?);
    m.config = Some(cfg);
    m.metric_history = report.epochs;
    m.metrics = m.metric_history.iter().rev().find_map(|e| e.val.clone()).map(strip_per_sample);
    for (k, v) in [
        ("config", "config.toml"),
        ("losses", "losses.jsonl"),
        ("metrics", "metrics.jsonl"),
        ("best_checkpoint", "best.ckpt"),
        ("last_checkpoint", "last.ckpt"),
    ] {
        m.outputs.insert(k.into(), v.into());
    }
    for e in &mut m.metric_history {
        e.val = e.val.take().map(strip_per_sample);
    }
    m.write(&a.out)?;
    Ok(m)
}

fn strip_per_sample(mut r: MetricsReport) -> MetricsReport {
    r.per_sample.clear();
    r
}

fn load_for_inference(ck_path: &Path, data_dir: &Path) -> Result<(Checkpoint, MhDetr, Vec<AnnotatedSample>)> {
    let ck = Checkpoint::load(ck_path)?;
    let model = ck.to_model()?;
    let data = load_dataset(data_dir, &ck.config.data)?;
    check_compatible(&model, &data)?;
    Ok((ck, model, data))
}

pub fn eval(a: &EvalArgs) -> Result<RunManifest> {
    let (ck, model, data) = load_for_inference(&a.checkpoint, &a.data)?;
    let report = evaluate_model(&model, &data)?;
    prepare_out(&a.out, a.force)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_text(&a.out.join("metrics.json"), &json)?;
    write_text(&a.out.join("metrics.txt"), &report.table())?;
    print!("{}", report.table());
    let mut m = RunManifest::new("eval", ck.config.train.seed);
    m.inputs.insert("checkpoint".into(), file_hash(&a.checkpoint)?);
    m.inputs.insert("data".into(), content_hash(&a.data)?);
    m.config = Some(ck.config);
    m.metrics = Some(strip_per_sample(report));
    m.outputs.insert("metrics".into(), "metrics.json".into());
    m.outputs.insert("table".into(), "metrics.txt".into());
    m.write(&a.out)?;
    Ok(m)
}

/// File-name-safe form of a query id.
pub fn file_stem(qid: &str) -> String {
    qid.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn predict(a: &PredictArgs) -> Result<RunManifest> {
    let (ck, model, data) = load_for_inference(&a.checkpoint, &a.data)?;
    let preds = predict_all(&model, &data)?;
    let records: Vec<PredictionRecord> = data
        .iter()
        .zip(&preds)
        .map(|(s, p)| PredictionRecord::new(s.qid(), s.duration(), p))
        .collect();
    prepare_out(&a.out, a.force)?;
    write_predictions(&a.out.join("predictions.jsonl"), &records)?;
    let mut m = RunManifest::new("predict", ck.config.train.seed);
    m.inputs.insert("checkpoint".into(), file_hash(&a.checkpoint)?);
    m.inputs.insert("data".into(), content_hash(&a.data)?);
    m.config = Some(ck.config);
    m.outputs.insert("predictions".into(), "predictions.jsonl".into());
    if a.plot {
        std::fs::create_dir_all(a.out.join("plots"))?;
        for (s, r) in data.iter().zip(&records) {
            let svg = render_svg(&PlotInput {
                query: &s.record.query,
                duration: s.duration(),
                clip_len: s.clip_len,
                gt_windows: &s.record.relevant_windows,
                gt_saliency: &s.gt.saliency_labels,
                prediction: r,
                top_k: a.plot_top_k,
            });
            write_text(&a.out.join("plots").join(format!("{}.svg", file_stem(s.qid()))), &svg)?;
        }
        m.outputs.insert("plots".into(), "plots".into());
    }
    m.write(&a.out)?;
    Ok(m)
}

/// `(module, count)` in parameter order, then the total.
pub fn param_counts(model: &MhDetr) -> (Vec<(String, usize)>, usize) {
    let mut rows: Vec<(String, usize)> = Vec::new();
    for (_, name, t) in model.params.iter() {
        let m = module_of(name);
        match rows.iter_mut().find(|(n, _)| *n == m) {
            Some((_, c)) => *c += t.len(),
            None => rows.push((m, t.len())),
        }
    }
    (rows, model.num_params())
}

pub fn params(a: &ParamsArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => Config::from_toml(&std::fs::read_to_string(p)?)?,
        None => Config::default(),
    };
    let model = MhDetr::new(&cfg.model)?;
    let (rows, total) = param_counts(&model);
    if a.json {
        let obj: BTreeMap<String, usize> = rows.into_iter().chain([("total".to_string(), total)]).collect();
        println!("{}", serde_json::to_string_pretty(&obj)?);
    } else {
        for (m, c) in rows {
            println!("{m:<24} {c:>10}");
        }
        println!("{:<24} {total:>10}", "total");
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(a).map(drop),
        Command::Train(a) => train(a).map(drop),
        Command::Eval(a) => eval(a).map(drop),
        Command::Predict(a) => predict(a).map(drop),
        Command::Params(a) => params(a),
    }
}
