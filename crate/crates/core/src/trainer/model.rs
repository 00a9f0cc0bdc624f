use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Arch {
    Linear,
    /// One ReLU hidden layer.
    Mlp {
        hidden_units: usize,
    },
}

/// Dense weight matrix with the bias stored as the last column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows * cols` entries.
    pub data: Vec<f64>,
}

impl Layer {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self {
            rows: outputs,
            cols: inputs + 1,
            data: vec![0.0; outputs * (inputs + 1)],
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, bias included.
    pub fn uniform<R: Rng>(outputs: usize, inputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let data = (0..outputs * (inputs + 1))
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            rows: outputs,
            cols: inputs + 1,
            data,
        }
    }

    pub fn inputs(&self) -> usize {
        self.cols - 1
    }

    #[inline]
    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out[r] = W[r, :-1] · x + W[r, -1]`.
    pub fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let n = self.inputs();
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = row[n];
            for (w, v) in row[..n].iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }

    /// Accumulates `scale * delta ⊗ [x, 1]`.
    fn add_outer(&mut self, delta: &[f64], x: &[f64], scale: f64) {
        let n = self.inputs();
        for (r, d) in delta.iter().enumerate() {
            let g = d * scale;
            if g == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, v) in row[..n].iter_mut().zip(x) {
                *w += g * v;
            }
            row[n] += g;
        }
    }
}

/// A trained classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Arch,
    pub label_set: Vec<Label>,
    pub feature_dim: usize,
    pub layers: Vec<Layer>,
}

/// Scratch buffers for one forward/backward pass.
#[derive(Default)]
pub(crate) struct Workspace {
    hidden: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
    delta_hidden: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Arch, feature_dim: usize, label_set: Vec<Label>) -> Self {
        let k = label_set.len();
        let layers = match arch {
            Arch::Linear => vec![Layer::zeros(k, feature_dim)],
            Arch::Mlp { hidden_units } => vec![
                Layer::zeros(hidden_units, feature_dim),
                Layer::zeros(k, hidden_units),
            ],
        };
        Self {
            arch,
            label_set,
            feature_dim,
            layers,
        }
    }

    pub fn init<R: Rng>(
        arch: Arch,
        feature_dim: usize,
        label_set: Vec<Label>,
        rng: &mut R,
    ) -> Self {
        let k = label_set.len();
        let layers = match arch {
            Arch::Linear => vec![Layer::uniform(k, feature_dim, rng)],
            Arch::Mlp { hidden_units } => vec![
                Layer::uniform(hidden_units, feature_dim, rng),
                Layer::uniform(k, hidden_units, rng),
            ],
        };
        Self {
            arch,
            label_set,
            feature_dim,
            layers,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.label_set.len()
    }

    /// Checks that tensor shapes agree with the architecture.
    pub fn validate(&self) -> Result<(), TrainError> {
        crate::compat::validate_label_set(&self.label_set).map_err(TrainError::ShapeMismatch)?;
        let k = self.num_classes();
        let expected: Vec<(usize, usize)> = match self.arch {
            Arch::Linear => vec![(k, self.feature_dim + 1)],
            Arch::Mlp { hidden_units } => {
                if hidden_units == 0 {
                    return Err(TrainError::ShapeMismatch(
                        "MLP needs at least one hidden unit".into(),
                    ));
                }
                vec![(hidden_units, self.feature_dim + 1), (k, hidden_units + 1)]
            }
        };
        if self.layers.len() != expected.len() {
            return Err(TrainError::ShapeMismatch(format!(
                "{:?} expects {} layers, found {}",
                self.arch,
                expected.len(),
                self.layers.len()
            )));
        }
        for (i, (layer, (rows, cols))) in self.layers.iter().zip(expected).enumerate() {
            if layer.rows != rows || layer.cols != cols || layer.data.len() != rows * cols {
                return Err(TrainError::ShapeMismatch(format!(
                    "layer {i}: expected {rows}x{cols}, found {}x{} with {} values",
                    layer.rows,
                    layer.cols,
                    layer.data.len()
                )));
            }
        }
        Ok(())
    }

    pub fn label_index(&self, label: Label) -> Option<usize> {
        self.label_set.iter().position(|&l| l == label)
    }

    /// Softmax class probabilities, in label-set order.
    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mut ws = Workspace::default();
        self.forward(x, &mut ws);
        ws.probs
    }

    /// `(label index, probability)` of the top class; ties go to the lower index.
    pub fn predict_one(&self, x: &[f64]) -> (usize, f64) {
        let probs = self.probabilities(x);
        argmax(&probs)
    }

    pub(crate) fn forward(&self, x: &[f64], ws: &mut Workspace) {
        match self.arch {
            Arch::Linear => self.layers[0].affine(x, &mut ws.logits),
            Arch::Mlp { .. } => {
                self.layers[0].affine(x, &mut ws.hidden);
                for h in ws.hidden.iter_mut() {
                    *h = h.max(0.0);
                }
                self.layers[1].affine(&ws.hidden, &mut ws.logits);
            }
        }
        softmax_into(&ws.logits, &mut ws.probs);
    }

    /// Cross-entropy of one example, adding `weight * dCE/dθ` into `grads`.
    pub(crate) fn accumulate(
        &self,
        x: &[f64],
        target: usize,
        weight: f64,
        ws: &mut Workspace,
        grads: &mut ModelParams,
    ) -> f64 {
        self.forward(x, ws);
        let loss = -log_softmax_at(&ws.logits, target);
        // dCE/dlogits = p - onehot
        let mut delta = std::mem::take(&mut ws.probs);
        delta[target] -= 1.0;
        match self.arch {
            Arch::Linear => grads.layers[0].add_outer(&delta, x, weight),
            Arch::Mlp { .. } => {
                grads.layers[1].add_outer(&delta, &ws.hidden, weight);
                let out = &self.layers[1];
                let h = out.inputs();
                ws.delta_hidden.clear();
                ws.delta_hidden.resize(h, 0.0);
                for (r, d) in delta.iter().enumerate() {
                    for (j, dh) in ws.delta_hidden.iter_mut().enumerate() {
                        *dh += out.data[r * out.cols + j] * d;
                    }
                }
                for (dh, a) in ws.delta_hidden.iter_mut().zip(&ws.hidden) {
                    if *a <= 0.0 {
                        *dh = 0.0;
                    }
                }
                let dh = std::mem::take(&mut ws.delta_hidden);
                grads.layers[0].add_outer(&dh, x, weight);
                ws.delta_hidden = dh;
            }
        }
        ws.probs = delta;
        loss
    }

    pub(crate) fn zeros_like(&self) -> ModelParams {
        ModelParams::zeros(self.arch, self.feature_dim, self.label_set.clone())
    }

    /// `self -= step * grads`.
    pub(crate) fn sgd_step(&mut self, grads: &ModelParams, step: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, d) in layer.data.iter_mut().zip(&g.data) {
                *w -= step * d;
            }
        }
    }

    pub(crate) fn clear(&mut self) {
        for layer in &mut self.layers {
            layer.data.fill(0.0);
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.data.len()).sum()
    }

    pub fn param_mut(&mut self, flat: usize) -> &mut f64 {
        let mut i = flat;
        for layer in &mut self.layers {
            if i < layer.data.len() {
                return &mut layer.data[i];
            }
            i -= layer.data.len();
        }
        panic!("parameter index {flat} out of range")
    }

    pub fn param(&self, flat: usize) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.data.iter())
            .nth(flat)
            .copied()
            .expect("parameter index in range")
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    softmax_into(logits, &mut out);
    out
}

fn softmax_into(logits: &[f64], out: &mut Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.extend(logits.iter().map(|z| (z - max).exp()));
    let sum: f64 = out.iter().sum();
    for p in out.iter_mut() {
        *p /= sum;
    }
}

fn log_softmax_at(logits: &[f64], i: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    logits[i] - lse
}

pub(crate) fn argmax(probs: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    (best, probs[best])
}
