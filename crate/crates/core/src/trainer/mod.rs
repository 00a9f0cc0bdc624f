//! Desk-scale softmax classifiers trained with plain minibatch SGD.
//!
//! The objective is cross-entropy `L`, optionally reweighted by a
//! compatibility penalty: examples that a frozen reference model classifies
//! correctly contribute `(1 + lambda_c) * L`, everything else contributes `L`.
//! Training is sequential and bit-reproducible from the config seed.

mod epoch_log;
mod model;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compat::{PredictionLog, PredictionRecord};
use crate::dataset::{Dataset, Instance};
use crate::seed;
use crate::Label;

pub use epoch_log::{read_epoch_log, write_epoch_log, EpochEvalLog};
use model::Workspace;
pub use model::{softmax, Arch, Layer, ModelParams};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {0} is not in the model's label set")]
    UnknownLabel(Label),
    #[error("lambda_c > 0 requires a reference model")]
    MissingReferenceModel,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn default_true() -> bool {
    true
}

fn default_arch() -> Arch {
    Arch::Linear
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_arch")]
    pub arch: Arch,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lambda_c: f64,
    #[serde(default = "default_true")]
    pub shuffle_each_epoch: bool,
    #[serde(skip)]
    pub warm_start_from: Option<ModelParams>,
    #[serde(skip)]
    pub reference_model: Option<ModelParams>,
}

impl TrainConfig {
    pub fn new(
        arch: Arch,
        learning_rate: f64,
        epochs: usize,
        batch_size: usize,
        seed: u64,
    ) -> Self {
        Self {
            arch,
            learning_rate,
            epochs,
            batch_size,
            seed,
            lambda_c: 0.0,
            shuffle_each_epoch: true,
            warm_start_from: None,
            reference_model: None,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig(
                "batch_size must be positive".into(),
            ));
        }
        if !(self.lambda_c >= 0.0 && self.lambda_c.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "lambda_c must be non-negative, got {}",
                self.lambda_c
            )));
        }
        if let Arch::Mlp { hidden_units: 0 } = self.arch {
            return Err(TrainError::InvalidConfig(
                "hidden_units must be positive".into(),
            ));
        }
        if self.lambda_c > 0.0 && self.reference_model.is_none() {
            return Err(TrainError::MissingReferenceModel);
        }
        Ok(())
    }
}

/// Label indices of `instances` under `params`' label set.
fn targets(params: &ModelParams, instances: &[Instance]) -> Result<Vec<usize>, TrainError> {
    instances
        .iter()
        .map(|i| {
            params
                .label_index(i.label)
                .ok_or(TrainError::UnknownLabel(i.label))
        })
        .collect()
}

fn check_dim(params: &ModelParams, dim: usize, what: &str) -> Result<(), TrainError> {
    if params.feature_dim != dim {
        return Err(TrainError::ShapeMismatch(format!(
            "{what} has {dim} features, model expects {}",
            params.feature_dim
        )));
    }
    Ok(())
}

/// Per-example loss weights `1 + lambda_c * 1[reference correct]`.
fn penalty_weights(
    cfg: &TrainConfig,
    instances: &[Instance],
) -> Result<Option<Vec<f64>>, TrainError> {
    if cfg.lambda_c == 0.0 {
        return Ok(None);
    }
    let reference = cfg
        .reference_model
        .as_ref()
        .ok_or(TrainError::MissingReferenceModel)?;
    Ok(Some(
        instances
            .iter()
            .map(|inst| {
                let (idx, _) = reference.predict_one(&inst.features);
                if reference.label_set[idx] == inst.label {
                    1.0 + cfg.lambda_c
                } else {
                    1.0
                }
            })
            .collect(),
    ))
}

/// Mean compatibility-penalized cross-entropy over `batch` and its gradient.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &[Instance],
    cfg: &TrainConfig,
) -> Result<(f64, ModelParams), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let weights = penalty_weights(cfg, batch)?;
    let targets = targets(params, batch)?;
    let mut grads = params.zeros_like();
    let mut ws = Workspace::default();
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (k, (inst, &t)) in batch.iter().zip(&targets).enumerate() {
        check_dim(params, inst.features.len(), "batch instance")?;
        let w = weights.as_ref().map_or(1.0, |w| w[k]);
        total += w * params.accumulate(&inst.features, t, w * scale, &mut ws, &mut grads);
    }
    Ok((total * scale, grads))
}

/// Mean over `batch` of `L + lambda_c * 1[reference correct] * L`.
pub fn loss(
    params: &ModelParams,
    batch: &[Instance],
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    loss_and_grad(params, batch, cfg).map(|(l, _)| l)
}

/// Trains on `d`, evaluating every set in `eval_sets` at the end of each epoch.
pub fn train(
    d: &Dataset,
    cfg: &TrainConfig,
    eval_sets: &[&Dataset],
) -> Result<(ModelParams, Vec<EpochEvalLog>), TrainError> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = seed::rng(cfg.seed);
    let mut params = match &cfg.warm_start_from {
        Some(start) => {
            start.validate()?;
            if start.arch != cfg.arch {
                return Err(TrainError::ShapeMismatch(format!(
                    "warm start model is {:?}, config asks for {:?}",
                    start.arch, cfg.arch
                )));
            }
            start.clone()
        }
        None => ModelParams::init(cfg.arch, d.feature_dim(), d.label_set().to_vec(), &mut rng),
    };
    check_dim(&params, d.feature_dim(), "training set")?;
    for e in eval_sets {
        check_dim(&params, e.feature_dim(), "evaluation set")?;
        if e.label_set() != params.label_set.as_slice() {
            return Err(TrainError::ShapeMismatch(format!(
                "evaluation set '{}' has label set {:?}, model has {:?}",
                e.name(),
                e.label_set(),
                params.label_set
            )));
        }
    }

    let instances = d.instances();
    let targets = targets(&params, instances)?;
    let weights = penalty_weights(cfg, instances)?;
    let mut logs: Vec<EpochEvalLog> = eval_sets
        .iter()
        .map(|e| EpochEvalLog::new(e.name(), e.ids().map(String::from).collect()))
        .collect();

    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut grads = params.zeros_like();
    let mut ws = Workspace::default();
    for _ in 0..cfg.epochs {
        if cfg.shuffle_each_epoch {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(cfg.batch_size) {
            grads.clear();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let w = weights.as_ref().map_or(1.0, |w| w[i]);
                params.accumulate(
                    &instances[i].features,
                    targets[i],
                    w * scale,
                    &mut ws,
                    &mut grads,
                );
            }
            params.sgd_step(&grads, cfg.learning_rate);
        }
        for (log, e) in logs.iter_mut().zip(eval_sets) {
            log.push_epoch(correctness(&params, e)?);
        }
    }
    Ok((params, logs))
}

/// Whether `params` classifies each instance of `d` correctly.
pub fn correctness(params: &ModelParams, d: &Dataset) -> Result<Vec<bool>, TrainError> {
    check_dim(params, d.feature_dim(), "dataset")?;
    Ok(d.instances()
        .iter()
        .map(|inst| {
            let (idx, _) = params.predict_one(&inst.features);
            params.label_set[idx] == inst.label
        })
        .collect())
}

/// Predictions of `params` on `d` as a prediction log.
///
/// Confidence is the max softmax probability; instance group tags are copied
/// onto the records.
pub fn predict(
    params: &ModelParams,
    d: &Dataset,
    model_id: &str,
) -> Result<PredictionLog, TrainError> {
    check_dim(params, d.feature_dim(), "dataset")?;
    let mut records = Vec::with_capacity(d.len());
    for inst in d.instances() {
        if params.label_index(inst.label).is_none() {
            return Err(TrainError::UnknownLabel(inst.label));
        }
        let (idx, conf) = params.predict_one(&inst.features);
        records.push(PredictionRecord {
            example_id: inst.id.clone(),
            true_label: inst.label,
            predicted_label: params.label_set[idx],
            confidence: Some(conf),
            groups: inst.groups.clone(),
        });
    }
    PredictionLog::new(model_id, params.label_set.clone(), records)
        .map_err(|e| TrainError::ShapeMismatch(e.to_string()))
}

/// Fraction of `d` classified correctly.
pub fn accuracy(params: &ModelParams, d: &Dataset) -> Result<f64, TrainError> {
    let bits = correctness(params, d)?;
    Ok(bits.iter().filter(|b| **b).count() as f64 / bits.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compat::{align, compare};
    use crate::synth;
    use proptest::prelude::*;

    fn linear_cfg(seed: u64) -> TrainConfig {
        TrainConfig::new(Arch::Linear, 0.1, 50, 32, seed)
    }

    #[test]
    fn separable_blobs_are_learned() {
        let d = synth::gaussian_blobs_binary(1000, 2.0, 1);
        let (params, _) = train(&d, &linear_cfg(3), &[]).unwrap();
        let acc = accuracy(&params, &d).unwrap();
        assert!(acc >= 0.99, "training accuracy {acc}");
    }

    #[test]
    fn zero_epochs_with_warm_start_is_identity() {
        let d = synth::gaussian_blobs_binary(100, 0.5, 1);
        let (start, _) = train(
            &d,
            &TrainConfig::new(Arch::Mlp { hidden_units: 5 }, 0.1, 2, 8, 4),
            &[],
        )
        .unwrap();
        let mut cfg = TrainConfig::new(Arch::Mlp { hidden_units: 5 }, 0.1, 0, 8, 99);
        cfg.warm_start_from = Some(start.clone());
        let (out, logs) = train(&d, &cfg, &[&d]).unwrap();
        assert_eq!(out, start);
        assert_eq!(logs[0].epochs(), 0);
    }

    #[test]
    fn seeds_control_the_run() {
        let d = synth::gaussian_blobs_binary(200, 0.5, 7);
        let cfg = TrainConfig::new(Arch::Linear, 0.05, 5, 16, 11);
        let (a, _) = train(&d, &cfg, &[]).unwrap();
        let (b, _) = train(&d, &cfg, &[]).unwrap();
        assert_eq!(a, b);
        let (c, _) = train(&d, &cfg.with_seed(12), &[]).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn epoch_logs_have_expected_shape() {
        let d = synth::gaussian_blobs_binary(60, 1.0, 2);
        let v = synth::gaussian_blobs_binary(40, 1.0, 3).with_name("val");
        let mut cfg = linear_cfg(1);
        cfg.epochs = 4;
        let (_, logs) = train(&d, &cfg, &[&v]).unwrap();
        assert_eq!(logs.len(), 1);
        assert_eq!(logs[0].dataset_id, "val");
        assert_eq!(logs[0].epochs(), 4);
        assert!(logs[0].correct.iter().all(|row| row.len() == 40));
    }

    #[test]
    fn config_errors() {
        let d = synth::gaussian_blobs_binary(10, 1.0, 2);
        let mut cfg = linear_cfg(1);
        cfg.lambda_c = 1.0;
        assert!(matches!(
            train(&d, &cfg, &[]),
            Err(TrainError::MissingReferenceModel)
        ));
        assert!(matches!(
            loss(
                &ModelParams::zeros(Arch::Linear, 2, vec![0, 1]),
                d.instances(),
                &cfg
            ),
            Err(TrainError::MissingReferenceModel)
        ));
        let empty = d.with_instances(vec![]).unwrap();
        assert!(matches!(
            train(&empty, &linear_cfg(1), &[]),
            Err(TrainError::EmptyDataset)
        ));
        let wide = synth::gaussian_blobs_binary(10, 1.0, 2);
        let mut cfg = linear_cfg(1);
        cfg.warm_start_from = Some(ModelParams::zeros(Arch::Linear, 3, vec![0, 1]));
        assert!(matches!(
            train(&wide, &cfg, &[]),
            Err(TrainError::ShapeMismatch(_))
        ));
        let params = ModelParams::zeros(Arch::Linear, 3, vec![0, 1]);
        assert!(matches!(
            predict(&params, &wide, "m"),
            Err(TrainError::ShapeMismatch(_))
        ));
    }

    fn small_batch() -> Vec<Instance> {
        vec![
            Instance::new("a", vec![1.0, -0.5], 0),
            Instance::new("b", vec![-0.3, 0.8], 1),
            Instance::new("c", vec![0.2, 0.1], 1),
        ]
    }

    fn reference() -> ModelParams {
        // Predicts class 0 iff x0 > 0: right on "a", wrong on "c", right on "b".
        ModelParams {
            arch: Arch::Linear,
            label_set: vec![0, 1],
            feature_dim: 2,
            layers: vec![Layer {
                rows: 2,
                cols: 3,
                data: vec![1.0, 0.0, 0.0, -1.0, 0.0, 0.0],
            }],
        }
    }

    fn per_example_ce(params: &ModelParams, batch: &[Instance]) -> Vec<f64> {
        batch
            .iter()
            .map(|inst| {
                let p = params.probabilities(&inst.features);
                -p[params.label_index(inst.label).unwrap()].ln()
            })
            .collect()
    }

    #[test]
    fn loss_reductions() {
        let mut rng = seed::rng(5);
        let params = ModelParams::init(Arch::Linear, 2, vec![0, 1], &mut rng);
        let batch = small_batch();
        let ce = per_example_ce(&params, &batch);
        let mut cfg = linear_cfg(0);
        let plain = loss(&params, &batch, &cfg).unwrap();
        assert!((plain - ce.iter().sum::<f64>() / 3.0).abs() < 1e-12);

        // Reference right everywhere: exactly twice the plain loss at lambda 1.
        cfg.lambda_c = 1.0;
        cfg.reference_model = Some(reference());
        let right_everywhere = vec![batch[0].clone(), batch[1].clone()];
        let l1 = loss(&params, &right_everywhere, &cfg).unwrap();
        let l0 = loss(&params, &right_everywhere, &linear_cfg(0)).unwrap();
        assert!((l1 - 2.0 * l0).abs() < 1e-12);

        // lambda 2, reference right on the first of two: (3 l1 + l2) / 2.
        cfg.lambda_c = 2.0;
        let pair = vec![batch[0].clone(), batch[2].clone()];
        let ce_pair = per_example_ce(&params, &pair);
        let got = loss(&params, &pair, &cfg).unwrap();
        assert!((got - (3.0 * ce_pair[0] + ce_pair[1]) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn predict_round_trips_through_compat() {
        let d = synth::gaussian_blobs_multi(50, 4, 3);
        let mut rng = seed::rng(8);
        let params = ModelParams::init(
            Arch::Mlp { hidden_units: 3 },
            d.feature_dim(),
            d.label_set().to_vec(),
            &mut rng,
        );
        let log = predict(&params, &d, "m").unwrap();
        assert_eq!(log.len(), 50);
        let report = compare(&align(log.clone(), log, false).unwrap());
        assert_eq!(report.btc, 1.0);
    }

    /// Central finite differences against the analytic gradient.
    fn gradient_check(params: &ModelParams, batch: &[Instance], cfg: &TrainConfig) -> f64 {
        let (_, grads) = loss_and_grad(params, batch, cfg).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..params.num_params() {
            let mut plus = params.clone();
            *plus.param_mut(k) += h;
            let mut minus = params.clone();
            *minus.param_mut(k) -= h;
            let numeric =
                (loss(&plus, batch, cfg).unwrap() - loss(&minus, batch, cfg).unwrap()) / (2.0 * h);
            let analytic = grads.param(k);
            let scale = analytic.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max((analytic - numeric).abs() / scale);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (arch, seed) in [
            (Arch::Linear, 1u64),
            (Arch::Mlp { hidden_units: 4 }, 2),
            (Arch::Mlp { hidden_units: 6 }, 3),
        ] {
            let d = synth::gaussian_blobs_multi(12, 3, seed);
            let mut rng = seed::rng(seed + 100);
            let params = ModelParams::init(arch, d.feature_dim(), d.label_set().to_vec(), &mut rng);
            let mut ref_rng = seed::rng(seed + 200);
            let reference = ModelParams::init(
                Arch::Linear,
                d.feature_dim(),
                d.label_set().to_vec(),
                &mut ref_rng,
            );
            for lambda in [0.0, 0.7, 3.0] {
                let mut cfg = TrainConfig::new(arch, 0.1, 1, 4, 0);
                cfg.lambda_c = lambda;
                cfg.reference_model = Some(reference.clone());
                let err = gradient_check(&params, d.instances(), &cfg);
                assert!(err < 1e-4, "{arch:?} lambda {lambda}: relative error {err}");
            }
        }
    }

    proptest! {
        #[test]
        fn penalized_loss_is_monotone_in_lambda(seed in 0u64..500, lo in 0.0f64..3.0, extra in 0.0f64..3.0) {
            let d = synth::gaussian_blobs_multi(8, 3, seed);
            let mut rng = seed::rng(seed);
            let params = ModelParams::init(Arch::Linear, d.feature_dim(), d.label_set().to_vec(), &mut rng);
            let reference = ModelParams::init(Arch::Linear, d.feature_dim(), d.label_set().to_vec(), &mut rng);
            let mut cfg = TrainConfig::new(Arch::Linear, 0.1, 1, 4, 0);
            cfg.reference_model = Some(reference.clone());
            cfg.lambda_c = lo;
            let a = loss(&params, d.instances(), &cfg).unwrap();
            cfg.lambda_c = lo + extra;
            let b = loss(&params, d.instances(), &cfg).unwrap();
            prop_assert!(b >= a);
            let any_right = correctness(&reference, &d).unwrap().iter().any(|c| *c);
            if extra > 0.0 && any_right {
                prop_assert!(b > a);
            }
            if !any_right {
                prop_assert_eq!(a, b);
            }
        }
    }
}
