use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::json;

use gsc_core::bench::{bench_scaling, log_spaced};
use gsc_core::eval::{evaluate, evaluate_with, load_predictions, save_predictions};
use gsc_core::graph::TripletVocabulary;
use gsc_core::gsc::{dump_soft_counts, soft_counts_csv, trace_layers};
use gsc_core::instances::{load_instances, save_instances, QAInstance};
use gsc_core::model::{Checkpoint, Model, ModelKind};
use gsc_core::overlap::{load_gold, overlap_report};
use gsc_core::regression::{sparse_regression, RegressionConfig};
use gsc_core::synth::{generate_synthetic, SyntheticTaskConfig};
use gsc_core::train::{metrics_csv, train, RunConfig};
use gsc_core::{Error, Result};

#[derive(Parser)]
#[command(name = "gsc", version, about = "Graph soft counter: training, evaluation and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multiple-choice corpus (JSONL).
    Gen {
        /// SyntheticTaskConfig JSON; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        id_prefix: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write checkpoint.json, metrics.csv and dev_predictions.jsonl.
    Train {
        #[arg(long, value_parser = parse_kind)]
        model: ModelKind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        /// RunConfig JSON with optional `train` and `model` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score instances with a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        preds_out: Option<PathBuf>,
    },
    /// Dump learned triplet soft counts and, with --data, per-layer traces.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 20)]
        top_k: usize,
        /// Soft-count CSV destination; stdout when absent.
        #[arg(long)]
        csv_out: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Number of instances from --data to trace.
        #[arg(long, default_value_t = 1)]
        trace_instances: usize,
        #[arg(long)]
        traces_out: Option<PathBuf>,
    },
    /// SparseVD run: sparse-ratio curve plus accuracy before and after pruning.
    Prune {
        /// Training corpus for the variational MLP.
        #[arg(long, required_unless_present = "regression")]
        data: Option<PathBuf>,
        #[arg(long, required_unless_present = "regression")]
        dev: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// RunConfig JSON, or RegressionConfig JSON with --regression.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run the sparse linear-regression experiment instead.
        #[arg(long)]
        regression: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the counting layers on random graphs of increasing size.
    Bench {
        #[arg(long, default_value_t = 1000)]
        min_edges: usize,
        #[arg(long, default_value_t = 1_000_000)]
        max_edges: usize,
        #[arg(long, default_value_t = 7)]
        points: usize,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prediction overlap between two prediction files and gold labels.
    Overlap {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// JSONL with `id` and `label` per line (instance files work).
        #[arg(long)]
        gold: PathBuf,
    },
}

fn parse_kind(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path)?;
    serde_json::from_str(&s).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn run_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg: RunConfig = match path {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn kind_vocab(cfg: &RunConfig, kind: ModelKind) -> TripletVocabulary {
    match kind {
        ModelKind::Gsc => cfg.model.gsc.vocab,
        ModelKind::Counter1 | ModelKind::Counter2 => cfg.model.counter.vocab,
        ModelKind::VdMlp => cfg.model.vd_mlp.vocab,
    }
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_run(out: &Path, run: &RunConfig, outcome: &gsc_core::train::TrainOutcome, dev: &[QAInstance]) -> Result<()> {
    fs::create_dir_all(out)?;
    outcome.checkpoint(run.train.seed).save(out.join("checkpoint.json"))?;
    fs::write(out.join("metrics.csv"), metrics_csv(&outcome.log))?;
    let report = evaluate(&outcome.model, dev)?;
    save_predictions(&report.predictions, out.join("dev_predictions.jsonl"))?;
    if outcome.model.is_variational() {
        fs::write(out.join("sparse_curve.csv"), outcome.sparse_curve.to_csv())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            config,
            instances,
            seed,
            id_prefix,
            out,
        } => {
            let mut cfg: SyntheticTaskConfig = match config {
                Some(p) => read_json(&p)?,
                None => SyntheticTaskConfig::default(),
            };
            if let Some(n) = instances {
                cfg.instances = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(p) = id_prefix {
                cfg.id_prefix = p;
            }
            let data = generate_synthetic(&cfg)?;
            save_instances(&data, &out)?;
            print_json(&json!({"instances": data.len(), "out": out}))
        }
        Command::Train {
            model,
            data,
            dev,
            config,
            seed,
            out,
        } => {
            let run = run_config(config.as_deref(), seed)?;
            let vocab = kind_vocab(&run, model);
            let train_set = load_instances(&data, &vocab)?;
            let dev_set = load_instances(&dev, &vocab)?;
            let outcome = train(&run, model, &train_set, &dev_set)?;
            write_run(&out, &run, &outcome, &dev_set)?;
            print_json(&json!({
                "model": model.name(),
                "params": outcome.model.param_count(),
                "epochs_run": outcome.log.len(),
                "best_epoch": outcome.best_epoch,
                "best_dev_accuracy": outcome.best_dev_accuracy,
                "out": out,
            }))
        }
        Command::Eval {
            checkpoint,
            data,
            preds_out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let inst = load_instances(&data, ck.model.vocab()).map_err(|e| match e {
                Error::Validation { .. } => Error::Checkpoint(format!("data does not fit the checkpoint: {e}")),
                other => other,
            })?;
            let report = evaluate(&ck.model, &inst)?;
            if let Some(p) = &preds_out {
                save_predictions(&report.predictions, p)?;
            }
            print_json(&json!({
                "model": ck.model.kind().name(),
                "instances": inst.len(),
                "accuracy": report.accuracy,
            }))
        }
        Command::Inspect {
            checkpoint,
            top_k,
            csv_out,
            data,
            trace_instances,
            traces_out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let Model::Gsc { config, params } = &ck.model else {
                return Err(Error::InvalidConfig(format!(
                    "inspect needs a gsc checkpoint, got {}",
                    ck.model.kind()
                )));
            };
            let csv = soft_counts_csv(&dump_soft_counts(params, config, top_k)?);
            match &csv_out {
                Some(p) => fs::write(p, &csv)?,
                None => print!("{csv}"),
            }
            if let Some(d) = data {
                let inst = load_instances(&d, &config.vocab)?;
                let mut traces = Vec::new();
                for i in inst.iter().take(trace_instances) {
                    let choices = i
                        .choices
                        .iter()
                        .map(|c| trace_layers(&c.graph, params, config))
                        .collect::<Result<Vec<_>>>()?;
                    traces.push(json!({"id": i.id, "label": i.label, "choices": choices}));
                }
                let s = serde_json::to_string_pretty(&traces)?;
                match &traces_out {
                    Some(p) => fs::write(p, s + "\n")?,
                    None => eprintln!("{s}"),
                }
            }
            Ok(())
        }
        Command::Prune {
            data,
            dev,
            test,
            config,
            seed,
            regression,
            out,
        } => {
            fs::create_dir_all(&out)?;
            if regression {
                let mut cfg: RegressionConfig = match &config {
                    Some(p) => read_json(p)?,
                    None => RegressionConfig::default(),
                };
                if let Some(s) = seed {
                    cfg.seed = s;
                }
                let r = sparse_regression(&cfg)?;
                fs::write(out.join("sparse_curve.csv"), r.curve.to_csv())?;
                fs::write(out.join("regression.json"), serde_json::to_string_pretty(&r)? + "\n")?;
                return print_json(&json!({
                    "null_removed": r.null_removed,
                    "null_features": cfg.null_features,
                    "active_kept": r.active_kept,
                    "active_features": cfg.features - cfg.null_features,
                    "rmse_before_pruning": r.rmse_before,
                    "rmse_after_pruning": r.rmse_after,
                }));
            }
            let run = run_config(config.as_deref(), seed)?;
            let vocab = run.model.vd_mlp.vocab;
            let (data, dev) = (data.expect("required by clap"), dev.expect("required by clap"));
            let train_set = load_instances(&data, &vocab)?;
            let dev_set = load_instances(&dev, &vocab)?;
            let outcome = train(&run, ModelKind::VdMlp, &train_set, &dev_set)?;
            write_run(&out, &run, &outcome, &dev_set)?;
            let mut last = outcome.checkpoint(run.train.seed);
            last.epoch = outcome.log.len();
            last.dev_accuracy = outcome.log.last().map_or(0.0, |e| e.dev_accuracy);
            last.model = outcome.final_model.clone();
            last.save(out.join("final_checkpoint.json"))?;
            // ratios and pruning describe the end of training
            let Model::VdMlp(m) = &outcome.final_model else { unreachable!() };
            let eval_set = match &test {
                Some(t) => load_instances(t, &vocab)?,
                None => dev_set,
            };
            let before = evaluate_with(&eval_set, |i| m.scores_with_threshold(i, f64::INFINITY))?.accuracy;
            let after = evaluate_with(&eval_set, |i| m.scores_with_threshold(i, m.config.vd.threshold))?.accuracy;
            let ratios: serde_json::Map<String, serde_json::Value> = ["input.embedding", "input.counts", "hidden"]
                .iter()
                .filter_map(|l| outcome.sparse_curve.last_ratio(l).map(|r| (l.to_string(), json!(r))))
                .collect();
            print_json(&json!({
                "eval_split": if test.is_some() { "test" } else { "dev" },
                "epochs_run": outcome.log.len(),
                "accuracy_before_pruning": before,
                "accuracy_after_pruning": after,
                "sparse_ratio": ratios,
                "out": out,
            }))
        }
        Command::Bench {
            min_edges,
            max_edges,
            points,
            repetitions,
            layers,
            seed,
            out,
        } => {
            let sizes = log_spaced(min_edges, max_edges, points);
            let r = bench_scaling(&sizes, repetitions, layers, seed)?;
            if let Some(p) = &out {
                fs::write(p, r.to_csv())?;
            } else {
                print!("{}", r.to_csv());
            }
            print_json(&json!({"slope": r.slope, "r2": r.r2, "layers": layers}))
        }
        Command::Overlap { a, b, gold } => {
            let r = overlap_report(&load_predictions(&a)?, &load_predictions(&b)?, &load_gold(&gold)?)?;
            print_json(&serde_json::to_value(&r)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
