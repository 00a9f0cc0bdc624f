//! Command-line front end.
//!
//! Every command writes a `RunManifest` next to its outputs, also when it
//! fails. Exit codes: 0 success, 1 internal error, 2 user or config error.
//! Stdout carries one summary line; diagnostics go to stderr.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::compat::{
    align, compare, confidence_histogram, group_breakdown, read_log, write_log_jsonl, Grouping,
    UpdateComparison, Which,
};
use crate::dataset::{read_dataset, write_dataset, Instance};
use crate::experiments::{resolve_workers, run_experiment, ExperimentConfig};
use crate::forgetting::{count_forgetting_events, forgetting_by_quadrant};
use crate::noise::NoiseSpec;
use crate::pipeline::{self, read_char_table};
use crate::synth::SynthKind;
use crate::trainer::{self, read_epoch_log, write_epoch_log, ModelParams, TrainConfig};

pub const TOOL_VERSION: &str = concat!("bcompat ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(
    name = "bcompat",
    version,
    about = "Backward-compatibility analysis for model updates"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare two prediction logs on their shared examples.
    Compare {
        log_h1: PathBuf,
        log_h2: PathBuf,
        /// Compare on the id intersection instead of requiring equal id sets.
        #[arg(long)]
        allow_partial: bool,
        /// `label` or `tag:<namespace>`.
        #[arg(long, default_value = "label")]
        group_by: String,
        /// Confidence histogram of the incompatible points with this many bins.
        #[arg(long)]
        hist_bins: Option<usize>,
        #[arg(long, default_value = "h2")]
        hist_model: String,
        #[arg(long, default_value = "bcompat-out")]
        out_dir: PathBuf,
    },
    /// Run an experiment config.
    Run {
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Generate a synthetic dataset.
    Synth {
        kind: String,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corrupt a dataset with a noise spec (JSON file).
    Inject {
        dataset: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a trainer config (JSON file).
    Train {
        dataset: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        warm_start: Option<PathBuf>,
        /// Reference model for the compatibility penalty.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Evaluation set tracked every epoch; requires --epoch-log.
        #[arg(long, requires = "epoch_log")]
        eval: Option<PathBuf>,
        #[arg(long, requires = "eval")]
        epoch_log: Option<PathBuf>,
    },
    /// Write a model's predictions on a dataset as a prediction log.
    Predict {
        model: PathBuf,
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "model")]
        model_id: String,
    },
    /// Forgetting events per compatibility quadrant.
    Forgetting {
        log_h1: PathBuf,
        log_h2: PathBuf,
        #[arg(long)]
        epochs_h1: PathBuf,
        #[arg(long)]
        epochs_h2: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Word-level blacklist failure rates under two character accuracy tables.
    Blacklist {
        words: PathBuf,
        #[arg(long)]
        h1: PathBuf,
        #[arg(long)]
        h2: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Compare { .. } => "compare",
            Command::Run { .. } => "run",
            Command::Synth { .. } => "synth",
            Command::Inject { .. } => "inject",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Forgetting { .. } => "forgetting",
            Command::Blacklist { .. } => "blacklist",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn user(message: impl ToString) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }

    fn internal(message: impl ToString) -> Self {
        Self {
            code: 1,
            message: message.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    /// SHA-256 of the file, `None` if it could not be read.
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub inputs: Vec<InputDigest>,
    pub tool_version: String,
    /// Relative to the manifest's directory.
    pub outputs: Vec<String>,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

pub fn sha256_file(path: &Path) -> Option<String> {
    fs::read(path)
        .ok()
        .map(|bytes| hex::encode(Sha256::digest(&bytes)))
}

fn digests(paths: &[PathBuf]) -> Vec<InputDigest> {
    paths
        .iter()
        .map(|p| InputDigest {
            path: p.display().to_string(),
            sha256: sha256_file(p),
        })
        .collect()
}

/// Where a command writes and which inputs it reads, known before it runs.
struct Plan {
    config: Value,
    inputs: Vec<PathBuf>,
    manifest: PathBuf,
    out_root: PathBuf,
}

fn file_manifest(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn parent_of(out: &Path) -> PathBuf {
    out.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn plan(cmd: &Command) -> CliResult<(Plan, Option<ExperimentConfig>)> {
    let p = |path: &Path| path.display().to_string();
    let file_plan = |config: Value, inputs: Vec<PathBuf>, out: &Path| Plan {
        config,
        inputs,
        manifest: file_manifest(out),
        out_root: parent_of(out),
    };
    Ok(match cmd {
        Command::Compare {
            log_h1,
            log_h2,
            allow_partial,
            group_by,
            hist_bins,
            hist_model,
            out_dir,
        } => (
            Plan {
                config: json!({
                    "log_h1": p(log_h1), "log_h2": p(log_h2), "allow_partial": allow_partial,
                    "group_by": group_by, "hist_bins": hist_bins, "hist_model": hist_model, "out_dir": p(out_dir),
                }),
                inputs: vec![log_h1.clone(), log_h2.clone()],
                manifest: out_dir.join("manifest.json"),
                out_root: out_dir.clone(),
            },
            None,
        ),
        Command::Run {
            config,
            out_dir,
            workers,
        } => {
            let text = fs::read_to_string(config)
                .map_err(|e| CliError::user(format!("{}: {e}", p(config))))?;
            let base = config.parent().unwrap_or(Path::new(""));
            let mut cfg = ExperimentConfig::from_json(&text, base)
                .map_err(|e| CliError::user(format!("{}: {e}", p(config))))?;
            if let Some(dir) = out_dir {
                cfg.output_dir = dir.clone();
            }
            if workers.is_some() {
                cfg.workers = *workers;
            }
            let mut inputs = vec![config.clone()];
            inputs.extend(cfg.input_paths());
            (
                Plan {
                    config: cfg.resolved(),
                    inputs,
                    manifest: cfg.output_dir.join("manifest.json"),
                    out_root: cfg.output_dir.clone(),
                },
                Some(cfg),
            )
        }
        Command::Synth {
            kind,
            size,
            seed,
            out,
        } => (
            file_plan(
                json!({"kind": kind, "size": size, "seed": seed, "out": p(out)}),
                vec![],
                out,
            ),
            None,
        ),
        Command::Inject { dataset, spec, out } => (
            file_plan(
                json!({"dataset": p(dataset), "spec": p(spec), "out": p(out)}),
                vec![dataset.clone(), spec.clone()],
                out,
            ),
            None,
        ),
        Command::Train {
            dataset,
            config,
            out,
            warm_start,
            reference,
            eval,
            epoch_log,
        } => {
            let mut inputs = vec![dataset.clone(), config.clone()];
            inputs.extend(warm_start.iter().cloned());
            inputs.extend(reference.iter().cloned());
            inputs.extend(eval.iter().cloned());
            (
                file_plan(
                    json!({
                        "dataset": p(dataset), "config": p(config), "out": p(out),
                        "warm_start": warm_start.as_deref().map(p), "reference": reference.as_deref().map(p),
                        "eval": eval.as_deref().map(p), "epoch_log": epoch_log.as_deref().map(p),
                    }),
                    inputs,
                    out,
                ),
                None,
            )
        }
        Command::Predict {
            model,
            dataset,
            out,
            model_id,
        } => (
            file_plan(
                json!({"model": p(model), "dataset": p(dataset), "out": p(out), "model_id": model_id}),
                vec![model.clone(), dataset.clone()],
                out,
            ),
            None,
        ),
        Command::Forgetting {
            log_h1,
            log_h2,
            epochs_h1,
            epochs_h2,
            out,
        } => (
            file_plan(
                json!({"log_h1": p(log_h1), "log_h2": p(log_h2), "epochs_h1": p(epochs_h1), "epochs_h2": p(epochs_h2), "out": p(out)}),
                vec![
                    log_h1.clone(),
                    log_h2.clone(),
                    epochs_h1.clone(),
                    epochs_h2.clone(),
                ],
                out,
            ),
            None,
        ),
        Command::Blacklist { words, h1, h2, out } => (
            file_plan(
                json!({"words": p(words), "h1": p(h1), "h2": p(h2), "out": p(out)}),
                vec![words.clone(), h1.clone(), h2.clone()],
                out,
            ),
            None,
        ),
    })
}

/// Collects written files, relative to the manifest directory.
struct Outputs {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn write(&mut self, path: &Path, data: &[u8]) -> CliResult<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::internal(format!("{}: {e}", parent.display())))?;
        }
        fs::write(path, data)
            .map_err(|e| CliError::internal(format!("{}: {e}", path.display())))?;
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        self.written.push(rel.to_path_buf());
        Ok(())
    }

    fn with(
        &mut self,
        path: &Path,
        f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    ) -> CliResult<()> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| CliError::internal(format!("{}: {e}", path.display())))?;
        self.write(path, &buf)
    }

    fn json<T: Serialize>(&mut self, path: &Path, value: &T) -> CliResult<()> {
        let mut data = serde_json::to_vec_pretty(value).map_err(CliError::internal)?;
        data.push(b'\n');
        self.write(path, &data)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::user(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
}

fn user<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::user(format!("{}: {e}", path.display()))
}

fn comparison(log_h1: &Path, log_h2: &Path, allow_partial: bool) -> CliResult<UpdateComparison> {
    let h1 = read_log(log_h1).map_err(user(log_h1))?;
    let h2 = read_log(log_h2).map_err(user(log_h2))?;
    align(h1, h2, allow_partial).map_err(CliError::user)
}

fn execute(cmd: &Command, cfg: Option<&ExperimentConfig>, out: &mut Outputs) -> CliResult<String> {
    match cmd {
        Command::Compare {
            log_h1,
            log_h2,
            allow_partial,
            group_by,
            hist_bins,
            hist_model,
            out_dir,
        } => {
            let grouping = Grouping::parse(group_by).ok_or_else(|| {
                CliError::user(format!(
                    "--group-by: '{group_by}' is neither 'label' nor 'tag:<namespace>'"
                ))
            })?;
            let which = Which::parse(hist_model).ok_or_else(|| {
                CliError::user(format!(
                    "--hist-model: expected h1 or h2, got '{hist_model}'"
                ))
            })?;
            let cmp = comparison(log_h1, log_h2, *allow_partial)?;
            let report = compare(&cmp);
            let groups = group_breakdown(&cmp, &grouping).map_err(CliError::user)?;
            let histogram = hist_bins
                .map(|bins| confidence_histogram(&cmp, which, bins))
                .transpose()
                .map_err(CliError::user)?;

            out.json(&out_dir.join("report.json"), &report)?;
            out.with(&out_dir.join("groups.csv"), |buf| {
                let mut w = csv::Writer::from_writer(buf);
                w.write_record([
                    "group",
                    "n",
                    "acc_h1",
                    "acc_h2",
                    "gain",
                    "incompatible_count",
                    "incompatible_share",
                    "both_correct",
                    "both_wrong",
                    "h1c_h2w",
                    "h1w_h2c",
                ])?;
                for g in &groups {
                    let q = &g.quadrants;
                    w.write_record([
                        g.group.clone(),
                        g.n.to_string(),
                        g.acc_h1.to_string(),
                        g.acc_h2.to_string(),
                        g.gain.to_string(),
                        g.incompatible_count.to_string(),
                        g.incompatible_share.to_string(),
                        q.both_correct.to_string(),
                        q.both_wrong.to_string(),
                        q.h1c_h2w.to_string(),
                        q.h1w_h2c.to_string(),
                    ])?;
                }
                w.flush()
            })?;
            out.with(&out_dir.join("incompatible.csv"), |buf| {
                let mut w = csv::Writer::from_writer(buf);
                w.write_record(["id", "y", "pred_h1", "pred_h2", "conf_h1", "conf_h2"])?;
                let conf = |c: Option<f64>| c.map(|c| c.to_string()).unwrap_or_default();
                let mut rows: Vec<_> = cmp
                    .pairs()
                    .filter(|(a, b)| a.is_correct() && !b.is_correct())
                    .collect();
                rows.sort_by(|x, y| x.0.example_id.cmp(&y.0.example_id));
                for (a, b) in rows {
                    w.write_record([
                        a.example_id.clone(),
                        a.true_label.to_string(),
                        a.predicted_label.to_string(),
                        b.predicted_label.to_string(),
                        conf(a.confidence),
                        conf(b.confidence),
                    ])?;
                }
                w.flush()
            })?;
            if let Some(h) = histogram {
                out.with(&out_dir.join("histogram.csv"), |buf| {
                    let mut w = csv::Writer::from_writer(buf);
                    w.write_record(["lower", "upper", "count"])?;
                    for (i, c) in h.counts.iter().enumerate() {
                        w.write_record([
                            h.edges[i].to_string(),
                            h.edges[i + 1].to_string(),
                            c.to_string(),
                        ])?;
                    }
                    w.flush()
                })?;
            }
            Ok(report.summary_line())
        }
        Command::Run { .. } => {
            let cfg = cfg.expect("run commands carry a parsed config");
            let workers = resolve_workers(None, cfg);
            let result = run_experiment(cfg, &cfg.output_dir, workers, &mut out.written);
            match result {
                Ok(r) => Ok(format!("{} {}", cfg.kind.name(), r.summary)),
                Err(e) if e.is_user_error() => Err(CliError::user(e)),
                Err(e) => Err(CliError::internal(e)),
            }
        }
        Command::Synth {
            kind,
            size,
            seed,
            out: path,
        } => {
            let kind: SynthKind = kind.parse().map_err(CliError::user)?;
            let d = kind.generate(*size, *seed);
            out.with(path, |buf| write_dataset(&d, buf))?;
            Ok(format!(
                "kind={kind} size={} seed={seed} classes={}",
                d.len(),
                d.label_set().len()
            ))
        }
        Command::Inject {
            dataset,
            spec,
            out: path,
        } => {
            let d = read_dataset(dataset).map_err(user(dataset))?;
            let spec: NoiseSpec = read_json(spec)?;
            let noisy = spec.apply(&d).map_err(CliError::user)?;
            let before: HashMap<&str, &Instance> =
                d.instances().iter().map(|i| (i.id.as_str(), i)).collect();
            let changed = noisy
                .instances()
                .iter()
                .filter(|i| before.get(i.id.as_str()) != Some(i))
                .count();
            out.with(path, |buf| write_dataset(&noisy, buf))?;
            Ok(format!(
                "instances={} changed_or_added={changed}",
                noisy.len()
            ))
        }
        Command::Train {
            dataset,
            config,
            out: path,
            warm_start,
            reference,
            eval,
            epoch_log,
        } => {
            let d = read_dataset(dataset).map_err(user(dataset))?;
            let mut tc: TrainConfig = read_json(config)?;
            tc.warm_start_from = warm_start
                .as_deref()
                .map(read_json::<ModelParams>)
                .transpose()?;
            tc.reference_model = reference
                .as_deref()
                .map(read_json::<ModelParams>)
                .transpose()?;
            let eval_set = eval
                .as_deref()
                .map(|p| read_dataset(p).map_err(user(p)))
                .transpose()?;
            let eval_sets: Vec<_> = eval_set.iter().collect();
            let (params, logs) = trainer::train(&d, &tc, &eval_sets).map_err(CliError::user)?;
            out.json(path, &params)?;
            if let (Some(log_path), Some(log)) = (epoch_log, logs.first()) {
                out.with(log_path, |buf| write_epoch_log(log, buf))?;
            }
            let acc = trainer::accuracy(&params, &d).map_err(CliError::internal)?;
            Ok(format!("epochs={} train_accuracy={acc:.4}", tc.epochs))
        }
        Command::Predict {
            model,
            dataset,
            out: path,
            model_id,
        } => {
            let params: ModelParams = read_json(model)?;
            params.validate().map_err(user(model))?;
            let d = read_dataset(dataset).map_err(user(dataset))?;
            let log = trainer::predict(&params, &d, model_id).map_err(CliError::user)?;
            out.with(path, |buf| write_log_jsonl(&log, buf))?;
            Ok(format!("n={} accuracy={:.4}", log.len(), log.accuracy()))
        }
        Command::Forgetting {
            log_h1,
            log_h2,
            epochs_h1,
            epochs_h2,
            out: path,
        } => {
            let cmp = comparison(log_h1, log_h2, false)?;
            let ids: Vec<String> = cmp.aligned_ids().map(String::from).collect();
            let read = |p: &Path, name: &str| -> CliResult<_> {
                let text = fs::read_to_string(p).map_err(user(p))?;
                let log = read_epoch_log(&text, name, Some(&ids)).map_err(user(p))?;
                count_forgetting_events(&log).map_err(user(p))
            };
            let c1 = read(epochs_h1, "h1")?;
            let c2 = read(epochs_h2, "h2")?;
            let table = forgetting_by_quadrant(&cmp, &c1, &c2).map_err(CliError::user)?;
            out.with(path, |buf| table.write_csv(buf))?;
            Ok(format!(
                "n={} ordered_h1={} ordered_h2={}",
                ids.len(),
                table.ordered("h1"),
                table.ordered("h2")
            ))
        }
        Command::Blacklist {
            words,
            h1,
            h2,
            out: path,
        } => {
            let list = pipeline::read_blacklist(words).map_err(user(words))?;
            let open = |p: &Path| fs::File::open(p).map_err(user(p));
            let t1 = read_char_table(open(h1)?, "h1").map_err(user(h1))?;
            let t2 = read_char_table(open(h2)?, "h2").map_err(user(h2))?;
            let rows = pipeline::blacklist_report(&list, &t1, &t2).map_err(CliError::user)?;
            out.with(path, |buf| pipeline::write_blacklist_csv(&rows, buf))?;
            Ok(match rows.first() {
                Some(r) => format!(
                    "words={} worst={} delta={:+.4}",
                    rows.len(),
                    r.word,
                    r.delta
                ),
                None => "words=0".to_string(),
            })
        }
    }
}

fn write_manifest(plan: &Plan, manifest: &RunManifest) -> CliResult<()> {
    if let Some(parent) = plan.manifest.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::internal(format!("{}: {e}", parent.display())))?;
    }
    let mut data = serde_json::to_vec_pretty(manifest).map_err(CliError::internal)?;
    data.push(b'\n');
    fs::write(&plan.manifest, data)
        .map_err(|e| CliError::internal(format!("{}: {e}", plan.manifest.display())))
}

fn config_output_dir(config: &Path) -> Option<PathBuf> {
    let text = fs::read_to_string(config).ok()?;
    let value: Value = serde_json::from_str(&text).ok()?;
    let dir = Path::new(value.get("output_dir")?.as_str()?);
    Some(config.parent().unwrap_or(Path::new("")).join(dir))
}

/// Runs a parsed command; returns the summary line or the error.
pub fn run(cli: &Cli) -> CliResult<String> {
    let (plan, cfg) = match plan(&cli.command) {
        Ok(p) => p,
        Err(e) => {
            // A rejected config still gets a manifest when its output
            // directory is knowable from the command line or the file.
            if let Some((config, dir)) = match &cli.command {
                Command::Run {
                    config, out_dir, ..
                } => out_dir
                    .clone()
                    .or_else(|| config_output_dir(config))
                    .map(|d| (config, d)),
                _ => None,
            } {
                let plan = Plan {
                    config: Value::Null,
                    inputs: vec![config.clone()],
                    manifest: dir.join("manifest.json"),
                    out_root: dir.clone(),
                };
                let manifest = RunManifest {
                    command: "run".into(),
                    config: Value::Null,
                    inputs: digests(&plan.inputs),
                    tool_version: TOOL_VERSION.into(),
                    outputs: Vec::new(),
                    status: RunStatus::Failed,
                    error: Some(e.message.clone()),
                };
                write_manifest(&plan, &manifest)?;
            }
            return Err(e);
        }
    };
    let inputs = digests(&plan.inputs);
    let mut out = Outputs {
        root: plan.out_root.clone(),
        written: Vec::new(),
    };
    let result = execute(&cli.command, cfg.as_ref(), &mut out);
    let manifest = RunManifest {
        command: cli.command.name().into(),
        config: plan.config.clone(),
        inputs,
        tool_version: TOOL_VERSION.into(),
        outputs: out
            .written
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
        status: if result.is_ok() {
            RunStatus::Ok
        } else {
            RunStatus::Failed
        },
        error: result.as_ref().err().map(|e| e.message.clone()),
    };
    write_manifest(&plan, &manifest)?;
    result
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            let _ = writeln!(std::io::stdout(), "{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
