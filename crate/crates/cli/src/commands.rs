use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use lacon::checkpoint::{write_atomic, Checkpoint, TOOL_VERSION};
use lacon::data::{self, Dataset, SyntheticSpec};
use lacon::encoder;
use lacon::eval::{self, EmbeddingTable};
use lacon::sweep::{self, SweepGrid};
use lacon::trainer::{self, TrainConfig};
use serde_json::{json, Value};

use crate::{CliResult, ConfigFlags, DiagnoseArgs, EvalArgs, ExportArgs, Failure, SampleArgs, Shared, SweepArgs, SynthArgs, TrainArgs};

fn apply_overrides(cfg: &mut TrainConfig, shared: &Shared, flags: &ConfigFlags) -> CliResult<()> {
    if let Some(path) = &shared.config {
        let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_kv(&text)?;
    }
    if let Some(seed) = &shared.seed {
        cfg.set("seed", seed)?;
    }
    for (key, value) in flags.pairs() {
        cfg.set(key, value)?;
    }
    Ok(())
}

/// Defaults, then the config file, then flags.
fn resolve_config(shared: &Shared, flags: &ConfigFlags) -> CliResult<TrainConfig> {
    let mut cfg = TrainConfig::default();
    apply_overrides(&mut cfg, shared, flags)?;
    cfg.validate()?;
    Ok(cfg)
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    path.as_deref().ok_or_else(|| Failure::config(format!("{flag} is required")))
}

fn sidecar(shared: &Shared) -> CliResult<Option<Vec<String>>> {
    Ok(match &shared.labels {
        Some(p) => Some(data::load_labels(p)?),
        None => None,
    })
}

fn load_dataset(shared: &Shared) -> CliResult<Dataset> {
    let path = require(&shared.dataset, "--dataset")?;
    let labels = sidecar(shared)?;
    Ok(data::load_jsonl(path, labels.as_deref())?)
}

fn out_dir(shared: &Shared) -> CliResult<PathBuf> {
    let dir = require(&shared.out, "--out")?.to_path_buf();
    fs::create_dir_all(&dir).map_err(|e| Failure::data(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

/// Prints to stdout, tolerating a closed pipe.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn labels_text(labels: &[String]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path).map_err(|e| Failure::checkpoint(e.to_string()))
}

/// Rows of `ds` to use, with labels re-indexed to the checkpoint's vocabulary.
fn select_split(ds: &Dataset, ck: &Checkpoint, split: &str) -> CliResult<Dataset> {
    if ds.classes() != ck.label_vocab.len() {
        return Err(Failure::checkpoint(format!("checkpoint has {} classes, dataset has {}", ck.label_vocab.len(), ds.classes())));
    }
    let aligned = ds.align_labels(&ck.label_vocab).map_err(|e| Failure::checkpoint(format!("label vocabularies differ: {e}")))?;
    match split {
        "all" => Ok(aligned),
        "dev" => {
            let idx = ck
                .dev_indices
                .as_ref()
                .ok_or_else(|| Failure::config("checkpoint records no dev rows (it was trained with an explicit dev file)"))?;
            if let Some(&bad) = idx.iter().find(|&&i| i >= aligned.len()) {
                return Err(Failure::checkpoint(format!("dev row {bad} is outside a dataset of {} rows", aligned.len())));
            }
            Ok(aligned.subset(idx))
        }
        other => Err(Failure::config(format!("unknown split \"{other}\" (expected all or dev)"))),
    }
}

pub fn train(args: TrainArgs) -> CliResult<()> {
    let cfg = resolve_config(&args.shared, &args.flags)?;
    let train = load_dataset(&args.shared)?;
    let vocab = sidecar(&args.shared)?.unwrap_or_else(|| train.label_vocab.clone());
    let dev = args.dev.as_deref().map(|p| data::load_jsonl(p, Some(&vocab))).transpose()?;
    let test = args.test.as_deref().map(|p| data::load_jsonl(p, Some(&vocab))).transpose()?;
    let out = out_dir(&args.shared)?;

    let result = trainer::train_multi(&cfg, &train, dev.as_ref(), test.as_ref())?;
    let best = result.best_run();
    let counts = train.class_counts();
    let runs: Vec<Value> = result
        .runs
        .iter()
        .map(|r| {
            let by_frequency = r.test.as_ref().filter(|_| counts.len() == 2).map(|m| eval::imbalance_f1(m, &counts)).transpose()?;
            Ok(json!({
                "config": r.checkpoint.config,
                "per_epoch": r.per_epoch,
                "best_epoch": r.best_epoch,
                "best_dev_metric": r.best_dev_metric,
                "best_dev": r.best_dev,
                "test": r.test,
                "test_f1_by_frequency": by_frequency,
                "stopped_early": r.stopped_early,
                "total_steps": r.total_steps,
            }))
        })
        .collect::<lacon::Result<_>>()?;
    let metrics = json!({
        "tool": "lacon",
        "tool_version": TOOL_VERSION,
        "config": cfg,
        "label_vocab": train.label_vocab,
        "checkpoint_seed": best.seed,
        "runs": runs,
        "summary": result.summary,
    });
    write_json(&out.join("metrics.json"), &metrics)?;
    best.checkpoint.save(&out.join("checkpoint.json"))?;
    write_text(&out.join("config.txt"), &format!("# lacon {TOOL_VERSION}\n{}", cfg.to_kv()))?;

    let s = &result.summary;
    println!("runs: {}", s.runs);
    println!("best dev {}: {}", cfg.task_metric.as_str(), s.best_dev);
    if let Some(acc) = s.test_accuracy {
        println!("test accuracy: {acc}");
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let ds = load_dataset(&args.shared)?;
    let rows = select_split(&ds, &ck, &args.split)?;
    let toks = ck.vocab.tokenize_dataset(&rows, ck.config.max_len)?;
    let metrics = trainer::evaluate(&ck.model, ck.config.mode, &toks)?;
    let doc = json!({
        "tool": "lacon",
        "tool_version": TOOL_VERSION,
        "config": ck.config,
        "split": args.split,
        "examples": toks.len(),
        "task_metric": ck.config.task_metric,
        "metric": metrics.get(ck.config.task_metric),
        "metrics": metrics,
    });
    if args.shared.out.is_some() {
        write_json(&out_dir(&args.shared)?.join("eval.json"), &doc)?;
    }
    emit(&serde_json::to_string_pretty(&doc).expect("JSON values serialize"));
    Ok(())
}

fn count_map(ds: &Dataset) -> Value {
    let counts = ds.class_counts();
    Value::Object(ds.label_vocab.iter().zip(counts).map(|(name, n)| (name.clone(), json!(n))).collect())
}

pub fn sample(args: SampleArgs) -> CliResult<()> {
    let seed: u64 = match &args.shared.seed {
        Some(s) => s.parse().map_err(|_| Failure::config(format!("seed: cannot parse \"{s}\"")))?,
        None => 0,
    };
    let ds = load_dataset(&args.shared)?;
    let manifest = match (args.k, args.rho) {
        (Some(k), _) => {
            let (train, dev) = data::sample_fewshot(&ds, k, seed)?;
            let out = out_dir(&args.shared)?;
            write_text(&out.join("train.jsonl"), &data::to_jsonl(&train))?;
            write_text(&out.join("dev.jsonl"), &data::to_jsonl(&dev))?;
            write_text(&out.join("labels.txt"), &labels_text(&ds.label_vocab))?;
            json!({
                "tool": "lacon",
                "tool_version": TOOL_VERSION,
                "kind": "fewshot",
                "seed": seed,
                "k": k,
                "counts": { "train": train.len(), "dev": dev.len() },
                "class_counts": { "train": count_map(&train), "dev": count_map(&dev) },
            })
        }
        (None, Some(rho)) => {
            let minority = match &args.minority {
                Some(name) => Some(
                    ds.label_vocab
                        .iter()
                        .position(|l| l == name)
                        .ok_or_else(|| Failure::config(format!("unknown minority class \"{name}\"")))?,
                ),
                None => None,
            };
            let sampled = data::sample_imbalanced(&ds, rho, seed, minority)?;
            let out = out_dir(&args.shared)?;
            write_text(&out.join("train.jsonl"), &data::to_jsonl(&sampled))?;
            write_text(&out.join("labels.txt"), &labels_text(&ds.label_vocab))?;
            let counts = sampled.class_counts();
            let minority = if counts[0] < counts[1] { 0 } else { 1 };
            json!({
                "tool": "lacon",
                "tool_version": TOOL_VERSION,
                "kind": "imbalance",
                "seed": seed,
                "rho": rho,
                "minority": ds.label_vocab[minority],
                "counts": count_map(&sampled),
            })
        }
        (None, None) => return Err(Failure::config("one of --k (few-shot) or --rho (imbalance) is required")),
    };
    write_json(&out_dir(&args.shared)?.join("manifest.json"), &manifest)?;
    println!("{}", serde_json::to_string(&manifest["counts"]).expect("JSON values serialize"));
    Ok(())
}

fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> CliResult<Vec<T>> {
    text.split(',').map(|v| v.trim().parse::<T>().map_err(|_| Failure::config(format!("{flag}: cannot parse \"{v}\"")))).collect()
}

pub fn sweep(args: SweepArgs) -> CliResult<()> {
    let cfg = resolve_config(&args.shared, &args.flags)?;
    let train = load_dataset(&args.shared)?;
    let vocab = sidecar(&args.shared)?.unwrap_or_else(|| train.label_vocab.clone());
    let dev = args.dev.as_deref().map(|p| data::load_jsonl(p, Some(&vocab))).transpose()?;
    let mut grid = SweepGrid::default_for(cfg.dim, cfg.batch_size);
    if let Some(t) = &args.taus {
        grid.taus = parse_list("--taus", t)?;
    }
    if let Some(l) = &args.lambdas {
        grid.lambdas = parse_list("--lambdas", l)?;
    }
    if let Some(h) = &args.heads_grid {
        grid.heads = parse_list("--heads-grid", h)?;
    }
    if let Some(b) = &args.batch_sizes {
        grid.batch_sizes = parse_list("--batch-sizes", b)?;
    }
    let out = out_dir(&args.shared)?;
    let report = sweep::sweep(&grid, &cfg, args.sweep_runs, &train, dev.as_ref())?;
    let doc = json!({
        "tool": "lacon",
        "tool_version": TOOL_VERSION,
        "config": cfg,
        "grid": grid,
        "sweep_runs": args.sweep_runs,
        "results": report.results,
        "winner": report.winner,
        "failures": report.failures,
    });
    write_json(&out.join("sweep.json"), &doc)?;
    match &report.winner {
        Some(w) => {
            let p = &w.config;
            println!(
                "winner: tau={} lambda={} heads={} batch_size={} mean={:.4} std={:.4}",
                p.tau, p.lambda, p.heads, p.batch_size, w.mean, w.std
            )
        }
        None => println!("no grid point trained successfully"),
    }
    if report.results.is_empty() {
        return Err(Failure { code: 3, message: format!("all {} grid points failed", report.failures.len()) });
    }
    Ok(())
}

/// Unit-norm representations of the selected rows and labels from a checkpoint.
fn embeddings_from_checkpoint(ck: &Checkpoint, rows: &Dataset) -> CliResult<EmbeddingTable> {
    let toks = ck.vocab.tokenize_dataset(rows, ck.config.max_len)?;
    Ok(EmbeddingTable {
        instances: eval::instance_matrix(&ck.model, ck.config.mode, &toks)?,
        classes: toks.iter().map(|t| t.label).collect(),
        labels: encoder::label_reprs(&ck.model.labels)?,
    })
}

pub fn diagnose(args: DiagnoseArgs) -> CliResult<()> {
    let (table, cfg, source) = match (&args.embeddings, &args.checkpoint) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
            let cfg = resolve_config(&args.shared, &args.flags)?;
            (eval::import_embeddings(&text)?, cfg, "embeddings")
        }
        (None, Some(path)) => {
            let ck = load_checkpoint(path)?;
            let ds = load_dataset(&args.shared)?;
            let rows = select_split(&ds, &ck, &args.split)?;
            let mut cfg = ck.config.clone();
            apply_overrides(&mut cfg, &args.shared, &args.flags)?;
            cfg.validate()?;
            (embeddings_from_checkpoint(&ck, &rows)?, cfg, "checkpoint")
        }
        (None, None) => return Err(Failure::config("either --embeddings or --checkpoint with --dataset is required")),
    };
    let report = eval::diagnostics(&table.instances, &table.labels, &table.classes, cfg.loss.tau)?;
    let doc = json!({
        "tool": "lacon",
        "tool_version": TOOL_VERSION,
        "config": cfg,
        "source": source,
        "instances": table.instances.rows(),
        "classes": table.labels.rows(),
        "report": report,
    });
    if args.shared.out.is_some() {
        write_json(&out_dir(&args.shared)?.join("diagnostics.json"), &doc)?;
    }
    emit(&serde_json::to_string_pretty(&doc).expect("JSON values serialize"));
    Ok(())
}

pub fn export(args: ExportArgs) -> CliResult<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let ds = load_dataset(&args.shared)?;
    let rows = select_split(&ds, &ck, &args.split)?;
    let table = embeddings_from_checkpoint(&ck, &rows)?;
    let csv = eval::export_embeddings(&table.instances, &table.labels, &table.classes)?;
    let out = out_dir(&args.shared)?;
    write_text(&out.join("embeddings.csv"), &csv)?;
    let meta = json!({
        "tool": "lacon",
        "tool_version": TOOL_VERSION,
        "config": ck.config,
        "split": args.split,
        "instances": table.instances.rows(),
        "label_vocab": ck.label_vocab,
    });
    write_json(&out.join("embeddings.json"), &meta)?;
    println!("wrote {} instance and {} label rows", table.instances.rows(), table.labels.rows());
    Ok(())
}

pub fn synth(args: SynthArgs) -> CliResult<()> {
    let seed: u64 = match &args.shared.seed {
        Some(s) => s.parse().map_err(|_| Failure::config(format!("seed: cannot parse \"{s}\"")))?,
        None => 0,
    };
    let spec = SyntheticSpec {
        classes: args.classes,
        per_class: args.per_class,
        vocab_per_class: args.vocab_per_class,
        noise_rate: args.noise,
        seed,
    };
    let corpus = data::gen_synthetic(&spec)?;
    let out = out_dir(&args.shared)?;
    write_text(&out.join("data.jsonl"), &data::to_jsonl(&corpus.dataset))?;
    write_text(&out.join("labels.txt"), &labels_text(&corpus.dataset.label_vocab))?;
    let manifest = json!({
        "tool": "lacon",
        "tool_version": TOOL_VERSION,
        "spec": spec,
        "examples": corpus.dataset.len(),
        "bayes_accuracy": corpus.bayes_accuracy,
    });
    write_json(&out.join("manifest.json"), &manifest)?;
    println!("wrote {} examples", corpus.dataset.len());
    Ok(())
}
