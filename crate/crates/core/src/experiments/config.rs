//! Experiment config files and the runner that writes their outputs.
//!
//! A config is one JSON object with an `experiment` kind, an `output_dir` and
//! kind-specific fields. Relative paths are resolved against the directory
//! holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    lambda_sweep, noise_sweep, saturation_curve, stochasticity_baseline, with_workers,
    BaselineOptions, BaselineResult, ExperimentError, Result, SweepOptions, SweepResult,
};
use crate::compat::{read_log, Grouping};
use crate::dataset::{read_dataset, Dataset};
use crate::noise::NoiseSpec;
use crate::pipeline::{self, CharAccuracyTable};
use crate::synth::SynthKind;
use crate::trainer::TrainConfig;

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "BCOMPAT_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Baseline,
    Saturation,
    Forgetting,
    NoiseSweep,
    LambdaSweep,
    Pipeline,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Baseline => "baseline",
            ExperimentKind::Saturation => "saturation",
            ExperimentKind::Forgetting => "forgetting",
            ExperimentKind::NoiseSweep => "noise-sweep",
            ExperimentKind::LambdaSweep => "lambda-sweep",
            ExperimentKind::Pipeline => "pipeline",
        }
    }
}

/// A dataset file or a synthetic generator call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    File {
        path: PathBuf,
    },
    Synth {
        synth: SynthKind,
        size: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl DataSource {
    fn resolve(&mut self, base: &Path) {
        if let DataSource::File { path } = self {
            *path = base.join(&*path);
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::File { path } => Ok(read_dataset(path)?),
            DataSource::Synth { synth, size, seed } => Ok(synth.generate(*size, *seed)),
        }
    }

    fn path(&self) -> Option<&Path> {
        match self {
            DataSource::File { path } => Some(path),
            DataSource::Synth { .. } => None,
        }
    }
}

fn default_group_by() -> Vec<String> {
    vec!["label".to_string()]
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSpec {
    /// Root seed; trial seeds derive from it.
    pub seed: u64,
    pub trials: usize,
    pub trainer: TrainConfig,
    pub train: DataSource,
    pub test: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<DataSource>,
    #[serde(default = "default_group_by")]
    pub group_by: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub seed: u64,
    pub trials: usize,
    pub trainer: TrainConfig,
    pub big: DataSource,
    /// The small clean set; defaults to the first `small_size` instances of `big`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub small: Option<DataSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub small_size: Option<usize>,
    pub test: DataSource,
    pub noise: NoiseSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default = "default_group_by")]
    pub group_by: Vec<String>,
    #[serde(default = "default_true")]
    pub warm_start: bool,
    #[serde(default = "default_true")]
    pub baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TableSource {
    Table { table: PathBuf },
    Log { log: PathBuf, charmap: PathBuf },
}

impl TableSource {
    fn resolve(&mut self, base: &Path) {
        match self {
            TableSource::Table { table } => *table = base.join(&*table),
            TableSource::Log { log, charmap } => {
                *log = base.join(&*log);
                *charmap = base.join(&*charmap);
            }
        }
    }

    fn paths(&self) -> Vec<PathBuf> {
        match self {
            TableSource::Table { table } => vec![table.clone()],
            TableSource::Log { log, charmap } => vec![log.clone(), charmap.clone()],
        }
    }

    fn load(&self, model_id: &str) -> Result<CharAccuracyTable> {
        let open = |p: &Path| {
            fs::File::open(p).map_err(|source| ExperimentError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        match self {
            TableSource::Table { table } => Ok(pipeline::read_char_table(open(table)?, model_id)?),
            TableSource::Log { log, charmap } => {
                let log = read_log(log)?;
                let charmap = pipeline::read_charmap(open(charmap)?)?;
                Ok(pipeline::char_accuracy_from_log(&log, &charmap)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    pub blacklist: PathBuf,
    pub h1: TableSource,
    pub h2: TableSource,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentBody {
    Baseline(BaselineSpec),
    Sweep(SweepSpec),
    Pipeline(PipelineSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub output_dir: PathBuf,
    pub workers: Option<usize>,
    pub body: ExperimentBody,
}

fn field_error(field: &str, e: serde_json::Error) -> ExperimentError {
    ExperimentError::config(field, e.to_string())
}

fn check_group_by(group_by: &[String]) -> Result<Vec<Grouping>> {
    group_by
        .iter()
        .map(|g| {
            Grouping::parse(g).ok_or_else(|| {
                ExperimentError::config(
                    "group_by",
                    format!("'{g}' is neither 'label' nor 'tag:<namespace>'"),
                )
            })
        })
        .collect()
}

fn check_sorted(field: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(ExperimentError::config(field, "must not be empty"));
    }
    if values
        .windows(2)
        .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
    {
        return Err(ExperimentError::config(
            field,
            "values must be sorted in strictly increasing order",
        ));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_json(&text, base)
    }

    /// Parses and validates a config; relative paths are taken from `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| field_error("(document)", e))?;
        let Value::Object(mut map) = value else {
            return Err(ExperimentError::config(
                "(document)",
                "expected a JSON object",
            ));
        };
        let kind: ExperimentKind = match map.remove("experiment") {
            Some(v) => serde_json::from_value(v).map_err(|e| field_error("experiment", e))?,
            None => return Err(ExperimentError::config("experiment", "missing")),
        };
        let output_dir: PathBuf = match map.remove("output_dir") {
            Some(v) => serde_json::from_value(v).map_err(|e| field_error("output_dir", e))?,
            None => return Err(ExperimentError::config("output_dir", "missing")),
        };
        let workers: Option<usize> = match map.remove("workers") {
            Some(v) => Some(serde_json::from_value(v).map_err(|e| field_error("workers", e))?),
            None => None,
        };
        if workers == Some(0) {
            return Err(ExperimentError::config("workers", "must be positive"));
        }
        let rest = Value::Object(map);
        let body = match kind {
            ExperimentKind::Baseline | ExperimentKind::Saturation | ExperimentKind::Forgetting => {
                let mut spec: BaselineSpec =
                    serde_json::from_value(rest).map_err(|e| field_error(kind.name(), e))?;
                spec.train.resolve(base);
                spec.test.resolve(base);
                if let Some(v) = spec.validation.as_mut() {
                    v.resolve(base);
                }
                ExperimentBody::Baseline(spec)
            }
            ExperimentKind::NoiseSweep | ExperimentKind::LambdaSweep => {
                let mut spec: SweepSpec =
                    serde_json::from_value(rest).map_err(|e| field_error(kind.name(), e))?;
                spec.big.resolve(base);
                spec.test.resolve(base);
                if let Some(s) = spec.small.as_mut() {
                    s.resolve(base);
                }
                ExperimentBody::Sweep(spec)
            }
            ExperimentKind::Pipeline => {
                let mut spec: PipelineSpec =
                    serde_json::from_value(rest).map_err(|e| field_error(kind.name(), e))?;
                spec.blacklist = base.join(&spec.blacklist);
                spec.h1.resolve(base);
                spec.h2.resolve(base);
                ExperimentBody::Pipeline(spec)
            }
        };
        let cfg = Self {
            kind,
            output_dir: base.join(output_dir),
            workers,
            body,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        match &self.body {
            ExperimentBody::Baseline(spec) => {
                check_group_by(&spec.group_by)?;
                if spec.trials < 2 {
                    return Err(ExperimentError::config("trials", "must be at least 2"));
                }
                if self.kind == ExperimentKind::Forgetting && spec.validation.is_none() {
                    return Err(ExperimentError::config(
                        "validation",
                        "required for forgetting analysis",
                    ));
                }
            }
            ExperimentBody::Sweep(spec) => {
                check_group_by(&spec.group_by)?;
                if spec.trials == 0 {
                    return Err(ExperimentError::config("trials", "must be positive"));
                }
                match (&spec.small, spec.small_size) {
                    (Some(_), Some(_)) => {
                        return Err(ExperimentError::config(
                            "small_size",
                            "give either 'small' or 'small_size', not both",
                        ))
                    }
                    (None, None) => {
                        return Err(ExperimentError::config(
                            "small",
                            "missing ('small' or 'small_size')",
                        ))
                    }
                    _ => {}
                }
                match self.kind {
                    ExperimentKind::NoiseSweep => {
                        let rates = spec
                            .rates
                            .as_deref()
                            .ok_or_else(|| ExperimentError::config("rates", "missing"))?;
                        check_sorted("rates", rates)?;
                        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
                            return Err(ExperimentError::config(
                                "rates",
                                "values must lie in [0, 1]",
                            ));
                        }
                        if spec.lambdas.is_some() {
                            return Err(ExperimentError::config(
                                "lambdas",
                                "not used by noise-sweep",
                            ));
                        }
                    }
                    _ => {
                        let lambdas = spec
                            .lambdas
                            .as_deref()
                            .ok_or_else(|| ExperimentError::config("lambdas", "missing"))?;
                        check_sorted("lambdas", lambdas)?;
                        if lambdas[0] != 0.0 {
                            return Err(ExperimentError::config(
                                "lambdas",
                                "the first value must be 0",
                            ));
                        }
                        if spec.rates.is_some() {
                            return Err(ExperimentError::config(
                                "rates",
                                "not used by lambda-sweep; set noise.rate",
                            ));
                        }
                    }
                }
            }
            ExperimentBody::Pipeline(_) => {}
        }
        Ok(())
    }

    /// Files the run reads.
    pub fn input_paths(&self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        match &self.body {
            ExperimentBody::Baseline(s) => {
                out.extend(s.train.path().map(Path::to_path_buf));
                out.extend(s.test.path().map(Path::to_path_buf));
                out.extend(
                    s.validation
                        .as_ref()
                        .and_then(|v| v.path())
                        .map(Path::to_path_buf),
                );
            }
            ExperimentBody::Sweep(s) => {
                out.extend(
                    s.small
                        .as_ref()
                        .and_then(|v| v.path())
                        .map(Path::to_path_buf),
                );
                out.extend(s.big.path().map(Path::to_path_buf));
                out.extend(s.test.path().map(Path::to_path_buf));
            }
            ExperimentBody::Pipeline(s) => {
                out.push(s.blacklist.clone());
                out.extend(s.h1.paths());
                out.extend(s.h2.paths());
            }
        }
        out
    }

    /// The config as it will run, with resolved paths.
    pub fn resolved(&self) -> Value {
        let body = match &self.body {
            ExperimentBody::Baseline(s) => serde_json::to_value(s),
            ExperimentBody::Sweep(s) => serde_json::to_value(s),
            ExperimentBody::Pipeline(s) => serde_json::to_value(s),
        }
        .expect("config serializes");
        let mut map = serde_json::Map::new();
        map.insert("experiment".into(), Value::from(self.kind.name()));
        map.insert(
            "output_dir".into(),
            Value::from(self.output_dir.display().to_string()),
        );
        if let Some(w) = self.workers {
            map.insert("workers".into(), Value::from(w));
        }
        if let Value::Object(fields) = body {
            map.extend(fields);
        }
        Value::Object(map)
    }
}

/// What a run produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    /// Paths relative to the output directory, in writing order.
    pub outputs: Vec<PathBuf>,
    pub summary: String,
}

struct Writer<'a> {
    dir: &'a Path,
    written: &'a mut Vec<PathBuf>,
}

impl Writer<'_> {
    fn io(path: &Path, source: std::io::Error) -> ExperimentError {
        ExperimentError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn bytes(&mut self, rel: impl AsRef<Path>, data: &[u8]) -> Result<()> {
        let rel = rel.as_ref();
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Self::io(parent, e))?;
        }
        fs::write(&path, data).map_err(|e| Self::io(&path, e))?;
        self.written.push(rel.to_path_buf());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: impl AsRef<Path>, value: &T) -> Result<()> {
        let mut data = serde_json::to_vec_pretty(value).expect("results serialize");
        data.push(b'\n');
        self.bytes(rel, &data)
    }

    fn csv(
        &mut self,
        rel: impl AsRef<Path>,
        header: &[&str],
        rows: Vec<Vec<String>>,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let rel = rel.as_ref();
        let fail = |e: csv::Error| Self::io(rel, std::io::Error::other(e));
        w.write_record(header).map_err(fail)?;
        for row in rows {
            w.write_record(&row).map_err(fail)?;
        }
        let data = w
            .into_inner()
            .map_err(|e| Self::io(rel, std::io::Error::other(e.to_string())))?;
        self.bytes(rel, &data)
    }

    fn with<T>(
        &mut self,
        rel: impl AsRef<Path>,
        f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<T>,
    ) -> Result<()> {
        let mut buf = Vec::new();
        let rel = rel.as_ref();
        f(&mut buf).map_err(|e| Self::io(rel, e))?;
        self.bytes(rel, &buf)
    }
}

/// Worker count: the explicit value, else the config, else the environment,
/// else the number of CPUs.
pub fn resolve_workers(explicit: Option<usize>, cfg: &ExperimentConfig) -> usize {
    explicit
        .or(cfg.workers)
        .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()))
        .filter(|w| *w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs the experiment and writes its outputs under `out_dir`. Paths written
/// before a failure stay in `written`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    workers: usize,
    written: &mut Vec<PathBuf>,
) -> Result<RunOutput> {
    let mut w = Writer {
        dir: out_dir,
        written,
    };
    let summary = match &cfg.body {
        ExperimentBody::Baseline(spec) => with_workers(workers, || run_baseline(spec, &mut w))?,
        ExperimentBody::Sweep(spec) => with_workers(workers, || run_sweep(cfg.kind, spec, &mut w))?,
        ExperimentBody::Pipeline(spec) => run_pipeline(spec, &mut w)?,
    };
    Ok(RunOutput {
        outputs: w.written.clone(),
        summary,
    })
}

fn num(x: f64) -> String {
    x.to_string()
}

fn run_baseline(spec: &BaselineSpec, w: &mut Writer<'_>) -> Result<String> {
    let train = spec.train.load()?;
    let test = spec.test.load()?;
    let validation = spec.validation.as_ref().map(DataSource::load).transpose()?;
    let mut tc = spec.trainer.clone();
    tc.seed = spec.seed;
    let opts = BaselineOptions {
        validation: validation.as_ref(),
        groupings: check_group_by(&spec.group_by)?,
    };
    let result = stochasticity_baseline(&train, &test, &tc, spec.trials, &opts)?;
    write_baseline(&result, w)?;
    let a = &result.aggregate;
    let mut line = format!(
        "trials={} BTC={:.4}±{:.4} BEC={:.4}±{:.4} acc={:.4} unique_incompatible={}",
        a.trials,
        a.btc.mean,
        a.btc.std,
        a.bec.mean,
        a.bec.std,
        a.acc_h1.mean,
        result.saturation.last().copied().unwrap_or(0)
    );
    if let Some(f) = &result.forgetting {
        line.push_str(&format!(
            " forgetting_ordered={}/{}",
            f.ordered_trials, a.trials
        ));
    }
    Ok(line)
}

fn write_baseline(result: &BaselineResult, w: &mut Writer<'_>) -> Result<()> {
    for t in &result.trials {
        w.json(format!("trials/trial-{:03}.json", t.trial_index), t)?;
    }
    let a = &result.aggregate;
    let rows = [
        ("acc_h1", a.acc_h1),
        ("acc_h2", a.acc_h2),
        ("btc", a.btc),
        ("bec", a.bec),
    ]
    .into_iter()
    .map(|(m, v)| vec![m.to_string(), num(v.mean), num(v.std), a.trials.to_string()])
    .collect();
    w.csv("aggregate.csv", &["metric", "mean", "std", "trials"], rows)?;
    debug_assert_eq!(
        saturation_curve(&result.trials).ok().as_ref(),
        Some(&result.saturation)
    );
    let rows = result
        .saturation
        .iter()
        .enumerate()
        .map(|(k, u)| vec![(k + 1).to_string(), u.to_string()])
        .collect();
    w.csv("saturation.csv", &["k", "unique_incompatible"], rows)?;
    if let Some(f) = &result.forgetting {
        w.with("forgetting.csv", |buf| f.pooled.write_csv(buf))?;
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        aggregate: &'a super::BaselineAggregate,
        saturation: &'a [usize],
        #[serde(skip_serializing_if = "Option::is_none")]
        forgetting: Option<&'a super::ForgettingSummary>,
    }
    w.json(
        "summary.json",
        &Summary {
            aggregate: &result.aggregate,
            saturation: &result.saturation,
            forgetting: result.forgetting.as_ref(),
        },
    )
}

fn run_sweep(kind: ExperimentKind, spec: &SweepSpec, w: &mut Writer<'_>) -> Result<String> {
    let big = spec.big.load()?;
    let small = match (&spec.small, spec.small_size) {
        (Some(s), _) => s.load()?,
        (None, Some(n)) => {
            if n == 0 || n > big.len() {
                return Err(ExperimentError::config(
                    "small_size",
                    format!("must be in 1..={} (size of big)", big.len()),
                ));
            }
            big.head(n).with_name(format!("{}-head{n}", big.name()))
        }
        (None, None) => unreachable!("validated"),
    };
    let test = spec.test.load()?;
    let mut tc = spec.trainer.clone();
    tc.seed = spec.seed;
    let opts = SweepOptions {
        groupings: check_group_by(&spec.group_by)?,
        warm_start: spec.warm_start,
        baseline: spec.baseline,
    };
    let result = match kind {
        ExperimentKind::NoiseSweep => noise_sweep(
            &small,
            &big,
            &test,
            &spec.noise,
            spec.rates.as_deref().unwrap_or_default(),
            &tc,
            spec.trials,
            &opts,
        )?,
        _ => lambda_sweep(
            &small,
            &big,
            &test,
            &spec.noise,
            spec.lambdas.as_deref().unwrap_or_default(),
            &tc,
            spec.trials,
            &opts,
        )?,
    };
    write_sweep(&result, w)?;
    let axis = result.axis.name();
    let cell = |c: &super::SweepCell| {
        format!(
            "{axis}={}: BTC={:.4} BEC={:.4}",
            c.axis_value, c.btc.mean, c.bec.mean
        )
    };
    let first = &result.cells[0];
    let mut line = format!(
        "cells={} trials={} {}",
        result.cells.len(),
        first.trials,
        cell(first)
    );
    if let Some(last) = result.cells.last().filter(|_| result.cells.len() > 1) {
        line.push_str(" | ");
        line.push_str(&cell(last));
    }
    Ok(line)
}

fn write_sweep(result: &SweepResult, w: &mut Writer<'_>) -> Result<()> {
    let axis = result.axis.name();
    let trials = result.cells.first().map_or(1, |c| c.trials).max(1);
    for (k, t) in result.trials.iter().enumerate() {
        w.json(
            format!(
                "trials/{axis}-{:02}-trial-{:03}.json",
                k / trials,
                t.trial_index
            ),
            t,
        )?;
    }
    let rows = result
        .cells
        .iter()
        .map(|c| {
            let mut row = vec![num(c.axis_value), c.trials.to_string()];
            for m in [c.btc, c.bec, c.acc_h1, c.acc_h2, c.gain] {
                row.push(num(m.mean));
                row.push(num(m.std));
            }
            row
        })
        .collect();
    w.csv(
        "aggregate.csv",
        &[
            axis,
            "trials",
            "btc_mean",
            "btc_std",
            "bec_mean",
            "bec_std",
            "acc_h1_mean",
            "acc_h1_std",
            "acc_h2_mean",
            "acc_h2_std",
            "gain_mean",
            "gain_std",
        ],
        rows,
    )?;
    let rows = result
        .cells
        .iter()
        .flat_map(|c| {
            c.groups.iter().map(move |g| {
                vec![
                    num(c.axis_value),
                    g.grouping.clone(),
                    g.group.clone(),
                    g.trials.to_string(),
                    num(g.gain.mean),
                    num(g.gain.std),
                    num(g.incompatible_share.mean),
                    num(g.incompatible_share.std),
                ]
            })
        })
        .collect();
    w.csv(
        "groups.csv",
        &[
            axis,
            "grouping",
            "group",
            "trials",
            "gain_mean",
            "gain_std",
            "share_mean",
            "share_std",
        ],
        rows,
    )?;
    if let Some(b) = &result.baseline {
        let rows = [
            ("acc_h1", b.acc_h1),
            ("acc_h2", b.acc_h2),
            ("btc", b.btc),
            ("bec", b.bec),
        ]
        .into_iter()
        .map(|(m, v)| vec![m.to_string(), num(v.mean), num(v.std), b.trials.to_string()])
        .collect();
        w.csv("baseline.csv", &["metric", "mean", "std", "trials"], rows)?;
    }
    for (name, f) in [
        (
            "btc",
            (|c: &super::SweepCell| c.btc.mean) as fn(&super::SweepCell) -> f64,
        ),
        ("bec", |c| c.bec.mean),
        ("gain", |c| c.gain.mean),
    ] {
        let rows = result
            .cells
            .iter()
            .map(|c| vec![num(c.axis_value), num(f(c))])
            .collect();
        w.csv(format!("curve-{name}.csv"), &[axis, name], rows)?;
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        axis: super::SweepAxis,
        /// h1 is trained once per trial and shared by every axis value.
        h1_shared_across_axis: bool,
        cells: &'a [super::SweepCell],
        #[serde(skip_serializing_if = "Option::is_none")]
        baseline: Option<&'a super::BaselineAggregate>,
    }
    w.json(
        "summary.json",
        &Summary {
            axis: result.axis,
            h1_shared_across_axis: true,
            cells: &result.cells,
            baseline: result.baseline.as_ref(),
        },
    )
}

fn run_pipeline(spec: &PipelineSpec, w: &mut Writer<'_>) -> Result<String> {
    let words = pipeline::read_blacklist(&spec.blacklist)?;
    let t1 = spec.h1.load("h1")?;
    let t2 = spec.h2.load("h2")?;
    let rows = pipeline::blacklist_report(&words, &t1, &t2)?;
    w.with("chars-h1.csv", |buf| t1.write_csv(buf))?;
    w.with("chars-h2.csv", |buf| t2.write_csv(buf))?;
    w.with("report.csv", |buf| {
        pipeline::write_blacklist_csv(&rows, buf)
    })?;
    Ok(match rows.first() {
        Some(top) => format!(
            "words={} worst={} error_h1={:.4} error_h2={:.4} delta={:+.4}",
            rows.len(),
            top.word,
            top.error_h1,
            top.error_h2,
            top.delta
        ),
        None => "words=0".to_string(),
    })
}
