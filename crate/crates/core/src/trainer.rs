//! Mini-batch training: configuration, learning-rate schedule, AdamW, early
//! stopping and multi-seed aggregation.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{self, Dataset, TaskMetric, Vocab};
use crate::encoder::{EncoderMode, TokenizedExample};
use crate::error::{Error, Result};
use crate::eval::{self, MetricSet};
use crate::losses::{self, LossConfig};
use crate::model::Model;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    LaconVanilla,
    LaconFusion,
    CeBaseline,
}

impl Mode {
    pub fn encoder_mode(self) -> EncoderMode {
        match self {
            Mode::LaconFusion => EncoderMode::Fusion,
            Mode::LaconVanilla | Mode::CeBaseline => EncoderMode::Vanilla,
        }
    }

    pub fn is_contrastive(self) -> bool {
        self != Mode::CeBaseline
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::LaconVanilla => "lacon-vanilla",
            Mode::LaconFusion => "lacon-fusion",
            Mode::CeBaseline => "ce-baseline",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lacon-vanilla" => Ok(Mode::LaconVanilla),
            "lacon-fusion" => Ok(Mode::LaconFusion),
            "ce-baseline" => Ok(Mode::CeBaseline),
            other => Err(format!("unknown mode \"{other}\" (expected lacon-vanilla, lacon-fusion or ce-baseline)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub runs: usize,
    pub dev_fraction: f64,
    /// Epochs without dev improvement before stopping; 0 disables early stopping.
    pub patience: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    pub dim: usize,
    pub kernel_width: usize,
    pub max_len: usize,
    /// Metric used for model selection on the dev split.
    pub task_metric: TaskMetric,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::LaconVanilla,
            learning_rate: 5e-3,
            batch_size: 16,
            epochs: 30,
            warmup_fraction: 0.06,
            weight_decay: 0.01,
            seed: 0,
            runs: 10,
            dev_fraction: 0.05,
            patience: 3,
            clip_norm: 5.0,
            dim: 32,
            kernel_width: 3,
            max_len: data::DEFAULT_MAX_LEN,
            task_metric: TaskMetric::Accuracy,
            loss: LossConfig::default(),
        }
    }
}

/// Keys accepted by [`TrainConfig::set`], in rendering order.
pub const CONFIG_KEYS: [&str; 23] = [
    "mode",
    "learning_rate",
    "batch_size",
    "epochs",
    "warmup_fraction",
    "weight_decay",
    "seed",
    "runs",
    "dev_fraction",
    "patience",
    "clip_norm",
    "dim",
    "kernel_width",
    "max_len",
    "task_metric",
    "tau",
    "lambda",
    "heads",
    "enable_icl",
    "enable_lcl",
    "enable_ler",
    "multihead",
    "format_version",
];

const CONFIG_FORMAT_VERSION: &str = "1";

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| Error::ConfigInvalid(format!("{key}: cannot parse \"{value}\": {e}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.mode.is_contrastive() && self.loss.enable_lcl && self.batch_size < 2 {
            return bad("batch_size must be at least 2 when the label-centered loss is enabled".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad(format!("warmup_fraction must lie in (0, 1), got {}", self.warmup_fraction));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be finite and >= 0, got {}", self.weight_decay));
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 0.5) {
            return bad(format!("dev_fraction must lie in (0, 0.5), got {}", self.dev_fraction));
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return bad(format!("clip_norm must be finite and >= 0, got {}", self.clip_norm));
        }
        if self.dim == 0 || self.kernel_width == 0 || self.max_len == 0 {
            return bad("dim, kernel_width and max_len must be at least 1".into());
        }
        if self.mode.is_contrastive() {
            self.loss.validate(self.dim)?;
            if !self.loss.any_enabled() {
                return bad("every loss term is disabled".into());
            }
        }
        Ok(())
    }

    /// Sets one field from its flat-config key and textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "mode" => self.mode = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "warmup_fraction" => self.warmup_fraction = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "runs" => self.runs = parse_value(key, value)?,
            "dev_fraction" => self.dev_fraction = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "clip_norm" => self.clip_norm = parse_value(key, value)?,
            "dim" => self.dim = parse_value(key, value)?,
            "kernel_width" => self.kernel_width = parse_value(key, value)?,
            "max_len" => self.max_len = parse_value(key, value)?,
            "task_metric" => self.task_metric = parse_value(key, value)?,
            "tau" => self.loss.tau = parse_value(key, value)?,
            "lambda" => self.loss.lambda_reg = parse_value(key, value)?,
            "heads" => self.loss.heads = parse_value(key, value)?,
            "enable_icl" => self.loss.enable_icl = parse_value(key, value)?,
            "enable_lcl" => self.loss.enable_lcl = parse_value(key, value)?,
            "enable_ler" => self.loss.enable_ler = parse_value(key, value)?,
            "multihead" => self.loss.multihead = parse_value(key, value)?,
            "format_version" => {
                if value != CONFIG_FORMAT_VERSION {
                    return Err(Error::ConfigInvalid(format!("unsupported config format_version {value}")));
                }
            }
            other => return Err(Error::ConfigInvalid(format!("unknown config key \"{other}\""))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` document on top of `self`.
    ///
    /// Blank lines and lines starting with `#` are ignored; a key may appear once.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigInvalid(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::ConfigInvalid(format!("line {}: duplicate key \"{key}\"", n + 1)));
            }
            self.set(key, value).map_err(|e| match e {
                Error::ConfigInvalid(msg) => Error::ConfigInvalid(format!("line {}: {msg}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    /// Renders every key in canonical order; `from_kv(to_kv())` reproduces `self` exactly.
    pub fn to_kv(&self) -> String {
        let l = &self.loss;
        let values: [String; 23] = [
            self.mode.to_string(),
            self.learning_rate.to_string(),
            self.batch_size.to_string(),
            self.epochs.to_string(),
            self.warmup_fraction.to_string(),
            self.weight_decay.to_string(),
            self.seed.to_string(),
            self.runs.to_string(),
            self.dev_fraction.to_string(),
            self.patience.to_string(),
            self.clip_norm.to_string(),
            self.dim.to_string(),
            self.kernel_width.to_string(),
            self.max_len.to_string(),
            self.task_metric.as_str().to_string(),
            l.tau.to_string(),
            l.lambda_reg.to_string(),
            l.heads.to_string(),
            l.enable_icl.to_string(),
            l.enable_lcl.to_string(),
            l.enable_ler.to_string(),
            l.multihead.to_string(),
            CONFIG_FORMAT_VERSION.to_string(),
        ];
        CONFIG_KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn ceil_tolerant(x: f64) -> usize {
    // 0.06 * 500 lands a hair off 30 in binary; treat near-integers as integers
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Number of warmup steps: `ceil(warmup_fraction · total_steps)`.
pub fn warmup_steps(warmup_fraction: f64, total_steps: usize) -> usize {
    ceil_tolerant(warmup_fraction * total_steps as f64).min(total_steps)
}

/// Linear warmup from 0 to `lr`, then linear decay to 0 at `total_steps`.
pub fn lr_at_step(lr: f64, warmup_fraction: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 || step >= total_steps {
        return 0.0;
    }
    let warm = warmup_steps(warmup_fraction, total_steps);
    if step < warm {
        lr * step as f64 / warm as f64
    } else {
        lr * (total_steps - step) as f64 / (total_steps - warm) as f64
    }
}

/// AdamW with decoupled weight decay applied to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Model,
    pub second_moment: Model,
    pub step: u64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(model: &Model, weight_decay: f64) -> Self {
        Self { first_moment: model.zeros_like(), second_moment: model.zeros_like(), step: 0, weight_decay }
    }

    pub fn update(&mut self, model: &mut Model, grads: &Model, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let params = model.tensors_mut();
        let ms = self.first_moment.tensors_mut();
        let vs = self.second_moment.tensors_mut();
        for (((p, g), m), v) in params.into_iter().zip(grads.tensors()).zip(ms).zip(vs) {
            let iter = p.as_mut_slice().iter_mut().zip(g.1.as_slice()).zip(m.as_mut_slice()).zip(v.as_mut_slice());
            for (((p, &g), m), v) in iter {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + self.weight_decay * *p);
            }
        }
    }
}

/// Rescales `grads` so its global norm does not exceed `max_norm`; returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut Model, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the total objective over the epoch's batches.
    pub loss: f64,
    pub icl: f64,
    pub lcl: f64,
    pub ler: f64,
    pub ce: f64,
    /// Batches in which no label had both positives and negatives.
    pub lcl_skipped_batches: usize,
    pub dev_metric: f64,
    pub dev: MetricSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub best_epoch: usize,
    pub best_dev_metric: f64,
    pub best_dev: MetricSet,
    pub test: Option<MetricSet>,
    pub per_epoch: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub total_steps: usize,
    /// Parameters from the best dev epoch, with everything needed to reuse them.
    pub checkpoint: Checkpoint,
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Sample statistics; a single value has standard deviation 0.
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 { 0.0 } else { (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt() };
        Stat { mean, std }
    }
}

impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub best_dev: Stat,
    pub test_accuracy: Option<Stat>,
    pub test_macro_f1: Option<Stat>,
    pub test_matthews: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiRunResult {
    pub runs: Vec<RunResult>,
    pub summary: Summary,
}

impl MultiRunResult {
    /// The run with the highest dev metric (earliest on ties).
    pub fn best_run(&self) -> &RunResult {
        let mut best = &self.runs[0];
        for r in &self.runs[1..] {
            if r.best_dev_metric > best.best_dev_metric {
                best = r;
            }
        }
        best
    }
}

pub fn summarize(runs: &[RunResult]) -> Summary {
    let dev: Vec<f64> = runs.iter().map(|r| r.best_dev_metric).collect();
    let test_stat = |f: fn(&MetricSet) -> f64| -> Option<Stat> {
        let vals: Option<Vec<f64>> = runs.iter().map(|r| r.test.as_ref().map(f)).collect();
        vals.map(|v| Stat::of(&v))
    };
    Summary {
        runs: runs.len(),
        best_dev: Stat::of(&dev),
        test_accuracy: test_stat(|m| m.accuracy),
        test_macro_f1: test_stat(|m| m.macro_f1),
        test_matthews: test_stat(|m| m.matthews),
    }
}

fn tokenize_split(vocab: &Vocab, ds: &Dataset, labels: &[String], max_len: usize) -> Result<Vec<TokenizedExample>> {
    let aligned = if ds.label_vocab == labels { ds.clone() } else { ds.align_labels(labels)? };
    vocab.tokenize_dataset(&aligned, max_len)
}

pub fn evaluate(model: &Model, mode: Mode, examples: &[TokenizedExample]) -> Result<MetricSet> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let preds: Vec<usize> = eval::predict_examples(model, mode, examples)?.into_iter().map(|p| p.class).collect();
    let golds: Vec<usize> = examples.iter().map(|e| e.label).collect();
    eval::compute_metrics(&golds, &preds, model.classes())
}

fn batch_objective(model: &Model, batch: &[&TokenizedExample], cfg: &TrainConfig) -> Result<losses::LossBreakdown> {
    match cfg.mode {
        Mode::CeBaseline => losses::cross_entropy_loss(model, batch, cfg.mode.encoder_mode()),
        mode => losses::total_loss(model, batch, mode.encoder_mode(), &cfg.loss),
    }
}

/// Trains one model.
///
/// Without an explicit `dev` split, `dev_fraction` of `train` is held out
/// (stratified, seeded). The vocabulary is built from the training portion only.
pub fn train_one(cfg: &TrainConfig, train: &Dataset, dev: Option<&Dataset>, test: Option<&Dataset>) -> Result<RunResult> {
    cfg.validate()?;
    let classes = train.classes();
    if classes < 2 {
        return Err(Error::SingleClass);
    }
    let (train_part, dev_part, dev_indices) = match dev {
        Some(d) => (train.clone(), d.clone(), None),
        None => {
            let (tr, dv) = data::stratified_split(train, cfg.dev_fraction, cfg.seed);
            (train.subset(&tr), train.subset(&dv), Some(dv))
        }
    };
    if train_part.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dev_part.is_empty() {
        return Err(Error::ConfigInvalid("dev split is empty".into()));
    }
    let (train_tok, vocab) = data::build_vocab_and_tokenize(&train_part, cfg.max_len)?;
    let dev_tok = tokenize_split(&vocab, &dev_part, &train.label_vocab, cfg.max_len)?;

    let mut model = Model::init(cfg.seed, vocab.len(), cfg.dim, classes, cfg.kernel_width)?;
    if cfg.mode == Mode::CeBaseline {
        model = model.with_classifier(cfg.seed);
    }
    let mut opt = OptimizerState::new(&model, cfg.weight_decay);
    let steps_per_epoch = train_tok.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut rng = data::rng(cfg.seed, 61);
    let mut order: Vec<usize> = (0..train_tok.len()).collect();

    let mut step = 0usize;
    let mut per_epoch = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, MetricSet, Model)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 5];
        let mut skipped = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TokenizedExample> = chunk.iter().map(|&i| &train_tok[i]).collect();
            let wrap = |source: Error| Error::Training { epoch, step, source: Box::new(source) };
            let mut out = batch_objective(&model, &batch, cfg).map_err(wrap)?;
            for (s, v) in sums.iter_mut().zip([out.total, out.icl, out.lcl, out.ler, out.ce]) {
                *s += v;
            }
            skipped += usize::from(out.lcl_skipped);
            clip_global_norm(&mut out.grads, cfg.clip_norm);
            let lr = lr_at_step(cfg.learning_rate, cfg.warmup_fraction, step, total_steps);
            opt.update(&mut model, &out.grads, lr);
            if !model.all_finite() {
                return Err(wrap(Error::NonFinite("parameters after update".into())));
            }
            step += 1;
        }
        let dev = evaluate(&model, cfg.mode, &dev_tok).map_err(|e| Error::Training { epoch, step, source: Box::new(e) })?;
        let dev_metric = dev.get(cfg.task_metric);
        let n = steps_per_epoch as f64;
        per_epoch.push(EpochRecord {
            epoch,
            loss: sums[0] / n,
            icl: sums[1] / n,
            lcl: sums[2] / n,
            ler: sums[3] / n,
            ce: sums[4] / n,
            lcl_skipped_batches: skipped,
            dev_metric,
            dev: dev.clone(),
        });
        if best.as_ref().is_none_or(|b| dev_metric > b.1) {
            best = Some((epoch, dev_metric, dev, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }

    let (best_epoch, best_dev_metric, best_dev, best_model) = best.expect("at least one epoch ran");
    let test = match test {
        Some(t) => {
            let toks = tokenize_split(&vocab, t, &train.label_vocab, cfg.max_len)?;
            Some(evaluate(&best_model, cfg.mode, &toks)?)
        }
        None => None,
    };
    Ok(RunResult {
        seed: cfg.seed,
        best_epoch,
        best_dev_metric,
        best_dev,
        test,
        per_epoch,
        stopped_early,
        total_steps,
        checkpoint: Checkpoint { config: cfg.clone(), vocab, label_vocab: train.label_vocab.clone(), dev_indices, model: best_model },
    })
}

/// Trains the cross-entropy baseline: same encoder, linear scoring layer, softmax loss.
pub fn train_ce_baseline(cfg: &TrainConfig, train: &Dataset, dev: Option<&Dataset>, test: Option<&Dataset>) -> Result<RunResult> {
    let cfg = TrainConfig { mode: Mode::CeBaseline, ..cfg.clone() };
    train_one(&cfg, train, dev, test)
}

/// Runs `cfg.runs` independent seeds `seed, seed+1, …` and aggregates them.
///
/// Runs execute in parallel; results are ordered by seed and do not depend on scheduling.
pub fn train_multi(cfg: &TrainConfig, train: &Dataset, dev: Option<&Dataset>, test: Option<&Dataset>) -> Result<MultiRunResult> {
    cfg.validate()?;
    let runs = (0..cfg.runs as u64)
        .into_par_iter()
        .map(|i| {
            let run_cfg = TrainConfig { seed: cfg.seed.wrapping_add(i), ..cfg.clone() };
            train_one(&run_cfg, train, dev, test)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&runs);
    Ok(MultiRunResult { runs, summary })
}
