//! Multi-trial experiment designs.
//!
//! Trials are independent jobs run on the ambient rayon pool; results are
//! collected in `(axis, trial)` order, so numbers never depend on scheduling.
//! Trial `t` under root seed `r` uses `seed::trial_seed(r, t, role)` for the
//! roles `h1`, `h2` and `noise`.

mod config;

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compat::{
    align, compare, group_breakdown, CompatError, CompatibilityReport, GroupRow, Grouping,
    PredictionLog,
};
use crate::dataset::{Dataset, DatasetError};
use crate::forgetting::{
    count_forgetting_events, forgetting_by_quadrant, mean_std, ForgettingError, ForgettingTable,
};
use crate::noise::{NoiseError, NoiseSpec};
use crate::pipeline::PipelineError;
use crate::seed;
use crate::trainer::{self, ModelParams, TrainConfig, TrainError};

pub use config::{
    resolve_workers, run_experiment, BaselineSpec, DataSource, ExperimentBody, ExperimentConfig,
    ExperimentKind, PipelineSpec, RunOutput, SweepSpec, TableSource, WORKERS_ENV,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Compat(#[from] CompatError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Forgetting(#[from] ForgettingError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{missing} ids of the small set are not in the big set (e.g. '{example}')")]
    SubsetViolation { missing: usize, example: String },
    #[error("trial {trial} was evaluated on a different test set than trial 0")]
    TestSetMismatch { trial: usize },
    #[error("field '{field}': {message}")]
    InvalidConfig { field: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ExperimentError {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        ExperimentError::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Whether the error stems from user input rather than a defect.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, ExperimentError::Io { .. })
    }
}

type Result<T> = std::result::Result<T, ExperimentError>;

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        match mean_std(values) {
            (Some(mean), Some(std)) => Self { mean, std },
            _ => Self {
                mean: f64::NAN,
                std: f64::NAN,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSeeds {
    pub h1: u64,
    pub h2: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub noise: Option<u64>,
}

impl TrialSeeds {
    pub fn derive(root: u64, trial: usize) -> Self {
        Self {
            h1: seed::trial_seed(root, trial, "h1"),
            h2: seed::trial_seed(root, trial, "h2"),
            noise: None,
        }
    }

    fn with_noise(self, root: u64, trial: usize) -> Self {
        Self {
            noise: Some(seed::trial_seed(root, trial, "noise")),
            ..self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTable {
    pub grouping: String,
    pub rows: Vec<GroupRow>,
}

/// One `(h1, h2)` pair compared on the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_index: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub axis_value: Option<f64>,
    pub seeds: TrialSeeds,
    /// FNV-1a digest of the test ids, in test-set order.
    pub test_fingerprint: String,
    pub report: CompatibilityReport,
    pub groups: Vec<GroupTable>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub forgetting: Option<ForgettingTable>,
}

impl TrialResult {
    pub fn group_rows(&self, grouping: &str) -> Option<&[GroupRow]> {
        self.groups
            .iter()
            .find(|g| g.grouping == grouping)
            .map(|g| g.rows.as_slice())
    }
}

fn fingerprint(d: &Dataset) -> String {
    let mut bytes = Vec::new();
    for id in d.ids() {
        bytes.extend_from_slice(id.as_bytes());
        bytes.push(0);
    }
    format!("{:016x}", seed::fnv1a(&bytes))
}

pub fn grouping_name(g: &Grouping) -> String {
    match g {
        Grouping::ByTrueLabel => "label".to_string(),
        Grouping::ByTag(ns) => format!("tag:{ns}"),
    }
}

struct Evaluated {
    report: CompatibilityReport,
    groups: Vec<GroupTable>,
}

fn evaluate(h1: &PredictionLog, h2: &PredictionLog, groupings: &[Grouping]) -> Result<Evaluated> {
    let cmp = align(h1.clone(), h2.clone(), false)?;
    let report = compare(&cmp);
    let groups = groupings
        .iter()
        .map(|g| {
            Ok(GroupTable {
                grouping: grouping_name(g),
                rows: group_breakdown(&cmp, g)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluated { report, groups })
}

/// Options shared by the no-update baseline.
#[derive(Debug, Clone, Default)]
pub struct BaselineOptions<'a> {
    /// Set on which per-epoch correctness is tracked for forgetting analysis.
    pub validation: Option<&'a Dataset>,
    pub groupings: Vec<Grouping>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineAggregate {
    pub trials: usize,
    pub acc_h1: MeanStd,
    pub acc_h2: MeanStd,
    pub btc: MeanStd,
    pub bec: MeanStd,
}

impl BaselineAggregate {
    fn of(trials: &[TrialResult]) -> Self {
        let col = |f: fn(&CompatibilityReport) -> f64| {
            MeanStd::of(&trials.iter().map(|t| f(&t.report)).collect::<Vec<_>>())
        };
        Self {
            trials: trials.len(),
            acc_h1: col(|r| r.acc_h1),
            acc_h2: col(|r| r.acc_h2),
            btc: col(|r| r.btc),
            bec: col(|r| r.bec),
        }
    }
}

/// Forgetting statistics pooled over all trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingSummary {
    pub pooled: ForgettingTable,
    /// Trials in which `both_correct < both_wrong < h1c_h2w` holds for both models.
    pub ordered_trials: usize,
}

fn pool_forgetting(tables: &[&ForgettingTable]) -> ForgettingSummary {
    let mut rows = tables[0].rows.clone();
    for row in rows.iter_mut() {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for t in tables {
            let r = t
                .get(row.quadrant, &row.model)
                .expect("tables share their layout");
            if let (Some(m), Some(s)) = (r.mean, r.std) {
                n += r.n;
                sum += m * r.n as f64;
                sq += (s * s + m * m) * r.n as f64;
            }
        }
        row.n = n;
        if n == 0 {
            row.mean = None;
            row.std = None;
        } else {
            let mean = sum / n as f64;
            row.mean = Some(mean);
            row.std = Some((sq / n as f64 - mean * mean).max(0.0).sqrt());
        }
    }
    ForgettingSummary {
        pooled: ForgettingTable { rows },
        ordered_trials: tables
            .iter()
            .filter(|t| t.ordered("h1") && t.ordered("h2"))
            .count(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub trials: Vec<TrialResult>,
    pub aggregate: BaselineAggregate,
    /// `u_k` for `k = 1..=trials`.
    pub saturation: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub forgetting: Option<ForgettingSummary>,
}

/// Retrains on identical data with different seeds: any disagreement comes
/// from optimisation alone. `cfg.seed` is the root seed.
pub fn stochasticity_baseline(
    d_train: &Dataset,
    d_test: &Dataset,
    cfg: &TrainConfig,
    n_trials: usize,
    opts: &BaselineOptions<'_>,
) -> Result<BaselineResult> {
    if n_trials < 2 {
        return Err(ExperimentError::config(
            "trials",
            "the baseline needs at least 2 trials",
        ));
    }
    cfg.validate()?;
    let fp = fingerprint(d_test);
    let trials = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let seeds = TrialSeeds::derive(cfg.seed, t);
            let eval: Vec<&Dataset> = opts.validation.into_iter().collect();
            let (h1, logs1) = trainer::train(d_train, &cfg.with_seed(seeds.h1), &eval)?;
            let (h2, logs2) = trainer::train(d_train, &cfg.with_seed(seeds.h2), &eval)?;
            let p1 = trainer::predict(&h1, d_test, "h1")?;
            let p2 = trainer::predict(&h2, d_test, "h2")?;
            let ev = evaluate(&p1, &p2, &opts.groupings)?;
            let forgetting = match opts.validation {
                Some(v) => {
                    let cmp = align(
                        trainer::predict(&h1, v, "h1")?,
                        trainer::predict(&h2, v, "h2")?,
                        false,
                    )?;
                    let c1 = count_forgetting_events(&logs1[0])?;
                    let c2 = count_forgetting_events(&logs2[0])?;
                    Some(forgetting_by_quadrant(&cmp, &c1, &c2)?)
                }
                None => None,
            };
            Ok(TrialResult {
                trial_index: t,
                axis_value: None,
                seeds,
                test_fingerprint: fp.clone(),
                report: ev.report,
                groups: ev.groups,
                forgetting,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let saturation = saturation_curve(&trials)?;
    let tables: Vec<&ForgettingTable> = trials
        .iter()
        .filter_map(|t| t.forgetting.as_ref())
        .collect();
    Ok(BaselineResult {
        aggregate: BaselineAggregate::of(&trials),
        forgetting: (!tables.is_empty()).then(|| pool_forgetting(&tables)),
        saturation,
        trials,
    })
}

/// `u_k`: number of distinct incompatible ids over the first `k` trials.
pub fn saturation_curve(trials: &[TrialResult]) -> Result<Vec<usize>> {
    let Some(first) = trials.first() else {
        return Err(ExperimentError::config(
            "trials",
            "saturation needs at least one trial",
        ));
    };
    let mut seen: HashSet<&str> = HashSet::new();
    let mut curve = Vec::with_capacity(trials.len());
    for (k, t) in trials.iter().enumerate() {
        if t.test_fingerprint != first.test_fingerprint || t.report.n != first.report.n {
            return Err(ExperimentError::TestSetMismatch { trial: k });
        }
        seen.extend(t.report.incompatible_ids.iter().map(String::as_str));
        curve.push(seen.len());
    }
    Ok(curve)
}

/// Per-group aggregate of one sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub grouping: String,
    pub group: String,
    /// Trials in which the group was present.
    pub trials: usize,
    pub gain: MeanStd,
    pub incompatible_share: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub axis_value: f64,
    pub trials: usize,
    pub btc: MeanStd,
    pub bec: MeanStd,
    pub acc_h1: MeanStd,
    pub acc_h2: MeanStd,
    pub gain: MeanStd,
    pub groups: Vec<GroupStat>,
}

impl SweepCell {
    fn of(axis_value: f64, trials: &[&TrialResult]) -> Self {
        let col = |f: fn(&CompatibilityReport) -> f64| {
            MeanStd::of(&trials.iter().map(|t| f(&t.report)).collect::<Vec<_>>())
        };
        let mut per_group: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for t in trials {
            for table in &t.groups {
                for row in &table.rows {
                    let e = per_group
                        .entry((table.grouping.clone(), row.group.clone()))
                        .or_default();
                    e.0.push(row.gain);
                    e.1.push(row.incompatible_share);
                }
            }
        }
        Self {
            axis_value,
            trials: trials.len(),
            btc: col(|r| r.btc),
            bec: col(|r| r.bec),
            acc_h1: col(|r| r.acc_h1),
            acc_h2: col(|r| r.acc_h2),
            gain: col(|r| r.accuracy_gain),
            groups: per_group
                .into_iter()
                .map(|((grouping, group), (gains, shares))| GroupStat {
                    grouping,
                    group,
                    trials: gains.len(),
                    gain: MeanStd::of(&gains),
                    incompatible_share: MeanStd::of(&shares),
                })
                .collect(),
        }
    }

    pub fn group(&self, grouping: &str, group: &str) -> Option<&GroupStat> {
        self.groups
            .iter()
            .find(|g| g.grouping == grouping && g.group == group)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Rate,
    LambdaC,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Rate => "rate",
            SweepAxis::LambdaC => "lambda_c",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub cells: Vec<SweepCell>,
    /// No-update band: h1 against a cold retrain on the small set.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub baseline: Option<BaselineAggregate>,
    /// Every `(axis value, trial)` pair, in that order.
    pub trials: Vec<TrialResult>,
}

impl SweepResult {
    pub fn axis_values(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.axis_value).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub groupings: Vec<Grouping>,
    /// Initialise h2 from h1's weights.
    pub warm_start: bool,
    /// Also run the no-update baseline band.
    pub baseline: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            groupings: vec![Grouping::ByTrueLabel],
            warm_start: true,
            baseline: true,
        }
    }
}

fn check_axis(field: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(ExperimentError::config(field, "must not be empty"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ExperimentError::config(field, "values must be finite"));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ExperimentError::config(
            field,
            "values must be strictly increasing",
        ));
    }
    Ok(())
}

fn check_subset(small: &Dataset, big: &Dataset) -> Result<()> {
    let missing = small.ids_missing_from(big);
    match missing.first() {
        None => Ok(()),
        Some(first) => Err(ExperimentError::SubsetViolation {
            missing: missing.len(),
            example: first.clone(),
        }),
    }
}

struct UpdateSetup<'a> {
    small: &'a Dataset,
    big: &'a Dataset,
    test: &'a Dataset,
    cfg: &'a TrainConfig,
    trials: usize,
    opts: &'a SweepOptions,
}

/// Trains h1 once per trial, then one h2 per `(cell, trial)`.
fn run_update_grid<F>(
    setup: &UpdateSetup<'_>,
    axis: SweepAxis,
    values: &[f64],
    cell: F,
) -> Result<SweepResult>
where
    F: Fn(f64, &TrialSeeds, &ModelParams) -> Result<(Dataset, TrainConfig)> + Sync,
{
    let UpdateSetup {
        small,
        big,
        test,
        cfg,
        trials,
        opts,
    } = *setup;
    if trials == 0 {
        return Err(ExperimentError::config("trials", "must be positive"));
    }
    check_subset(small, big)?;
    cfg.validate()?;
    let root = cfg.seed;
    let fp = fingerprint(test);

    let firsts = (0..trials)
        .into_par_iter()
        .map(|t| {
            let seeds = TrialSeeds::derive(root, t).with_noise(root, t);
            let (h1, _) = trainer::train(small, &cfg.with_seed(seeds.h1), &[])?;
            let log = trainer::predict(&h1, test, "h1")?;
            Ok((seeds, h1, log))
        })
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|v| (0..trials).map(move |t| (v, t)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(v, t)| {
            let (seeds, h1, log1) = &firsts[t];
            let (data, mut c) = cell(values[v], seeds, h1)?;
            c.seed = seeds.h2;
            if opts.warm_start {
                c.warm_start_from = Some(h1.clone());
            }
            let (h2, _) = trainer::train(&data, &c, &[])?;
            let log2 = trainer::predict(&h2, test, "h2")?;
            let ev = evaluate(log1, &log2, &opts.groupings)?;
            Ok(TrialResult {
                trial_index: t,
                axis_value: Some(values[v]),
                seeds: *seeds,
                test_fingerprint: fp.clone(),
                report: ev.report,
                groups: ev.groups,
                forgetting: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let baseline = if opts.baseline {
        let base = (0..trials)
            .into_par_iter()
            .map(|t| {
                let (seeds, _, log1) = &firsts[t];
                let (h2, _) = trainer::train(small, &cfg.with_seed(seeds.h2), &[])?;
                let log2 = trainer::predict(&h2, test, "h2")?;
                let ev = evaluate(log1, &log2, &[])?;
                Ok(TrialResult {
                    trial_index: t,
                    axis_value: None,
                    seeds: TrialSeeds {
                        noise: None,
                        ..*seeds
                    },
                    test_fingerprint: fp.clone(),
                    report: ev.report,
                    groups: Vec::new(),
                    forgetting: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Some(BaselineAggregate::of(&base))
    } else {
        None
    };

    let cells = values
        .iter()
        .enumerate()
        .map(|(v, &x)| {
            let slice: Vec<&TrialResult> = results[v * trials..(v + 1) * trials].iter().collect();
            SweepCell::of(x, &slice)
        })
        .collect();
    Ok(SweepResult {
        axis,
        cells,
        baseline,
        trials: results,
    })
}

/// Corrupts the big set at each rate and measures the update from a
/// clean-small h1. h1 and the noise seed are shared across rates within a
/// trial.
#[allow(clippy::too_many_arguments)]
pub fn noise_sweep(
    d_clean_small: &Dataset,
    d_big: &Dataset,
    d_test: &Dataset,
    template: &NoiseSpec,
    rates: &[f64],
    cfg: &TrainConfig,
    trials_per_rate: usize,
    opts: &SweepOptions,
) -> Result<SweepResult> {
    check_axis("rates", rates)?;
    template.validate(d_big)?;
    for &r in rates {
        template.with_rate(r).validate(d_big)?;
    }
    let setup = UpdateSetup {
        small: d_clean_small,
        big: d_big,
        test: d_test,
        cfg,
        trials: trials_per_rate,
        opts,
    };
    run_update_grid(&setup, SweepAxis::Rate, rates, |rate, seeds, _| {
        let noisy = template
            .with_rate(rate)
            .with_seed(seeds.noise.expect("sweep seeds carry a noise seed"))
            .apply(d_big)?;
        let mut c = cfg.clone();
        c.lambda_c = 0.0;
        Ok((noisy, c))
    })
}

/// Fixed noise (at `noise.rate`), varying compatibility penalty with h1 as
/// the reference model.
#[allow(clippy::too_many_arguments)]
pub fn lambda_sweep(
    d_clean_small: &Dataset,
    d_big: &Dataset,
    d_test: &Dataset,
    noise: &NoiseSpec,
    lambdas: &[f64],
    cfg: &TrainConfig,
    trials: usize,
    opts: &SweepOptions,
) -> Result<SweepResult> {
    check_axis("lambdas", lambdas)?;
    if lambdas[0] != 0.0 {
        return Err(ExperimentError::config(
            "lambdas",
            "the first value must be 0",
        ));
    }
    noise.validate(d_big)?;
    let setup = UpdateSetup {
        small: d_clean_small,
        big: d_big,
        test: d_test,
        cfg,
        trials,
        opts,
    };
    run_update_grid(&setup, SweepAxis::LambdaC, lambdas, |lambda, seeds, h1| {
        let noisy = noise
            .with_seed(seeds.noise.expect("sweep seeds carry a noise seed"))
            .apply(d_big)?;
        let mut c = cfg.clone();
        c.lambda_c = lambda;
        c.reference_model = Some(h1.clone());
        Ok((noisy, c))
    })
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Runs `f` on a pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
