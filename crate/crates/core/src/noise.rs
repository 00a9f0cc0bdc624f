//! Structured training-set corruptions.
//!
//! Each instance draws from its own ChaCha8 stream seeded by `(seed, example id)`,
//! so the set of corrupted instances depends only on the ids, never on their
//! order, and instances outside the targeted labels or groups are passed
//! through untouched.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, Instance};
use crate::seed::instance_rng;
use crate::Label;

pub const DEFAULT_AREA_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("label {0} is not in the dataset's label set")]
    UnknownLabel(Label),
    #[error("noise pair uses label {0} twice")]
    IdenticalPair(Label),
    #[error("feature occlusion needs a dataset with a feature_shape")]
    NoShape,
    #[error("area fraction must lie strictly between 0 and 1, got {0}")]
    BadAreaFraction(f64),
    #[error("noise rate must lie in [0, 1], got {0}")]
    BadRate(f64),
    #[error("group flip needs a binary task, dataset has {0} labels")]
    NotBinary(usize),
    #[error("no instance carries group tag '{0}'")]
    UnknownGroup(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseKind {
    LabelSwap {
        label_a: Label,
        label_b: Label,
    },
    FeatureOcclusion {
        target_label: Label,
        #[serde(default = "default_area_fraction")]
        area_fraction: f64,
        #[serde(default)]
        fill_value: f64,
    },
    OutlierMerge {
        outlier_label: Label,
        target_label: Label,
    },
    GroupFlip {
        group_tag: String,
    },
}

fn default_area_fraction() -> f64 {
    DEFAULT_AREA_FRACTION
}

/// One corruption: what to do, how often, under which seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    #[serde(default)]
    pub rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn with_rate(&self, rate: f64) -> Self {
        Self {
            rate,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// Labels whose instances this noise touches.
    pub fn target_labels(&self) -> Vec<Label> {
        match &self.kind {
            NoiseKind::LabelSwap { label_a, label_b } => vec![*label_a, *label_b],
            NoiseKind::FeatureOcclusion { target_label, .. } => vec![*target_label],
            NoiseKind::OutlierMerge { target_label, .. } => vec![*target_label],
            NoiseKind::GroupFlip { .. } => Vec::new(),
        }
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset, NoiseError> {
        match &self.kind {
            NoiseKind::LabelSwap { label_a, label_b } => {
                inject_label_noise(d, (*label_a, *label_b), self.rate, self.seed)
            }
            NoiseKind::FeatureOcclusion {
                target_label,
                area_fraction,
                fill_value,
            } => inject_feature_occlusion(
                d,
                *target_label,
                self.rate,
                *area_fraction,
                *fill_value,
                self.seed,
            ),
            NoiseKind::OutlierMerge {
                outlier_label,
                target_label,
            } => inject_outlier_noise(d, *outlier_label, *target_label, self.rate, self.seed),
            NoiseKind::GroupFlip { group_tag } => {
                inject_group_flip(d, group_tag, self.rate, self.seed)
            }
        }
    }

    /// Checks parameters against a dataset without corrupting it.
    pub fn validate(&self, d: &Dataset) -> Result<(), NoiseError> {
        check_rate(self.rate)?;
        match &self.kind {
            NoiseKind::LabelSwap { label_a, label_b } => check_pair(d, *label_a, *label_b),
            NoiseKind::FeatureOcclusion {
                target_label,
                area_fraction,
                ..
            } => {
                check_label(d, *target_label)?;
                check_occlusion(d, *area_fraction).map(|_| ())
            }
            NoiseKind::OutlierMerge {
                outlier_label,
                target_label,
            } => check_pair(d, *outlier_label, *target_label),
            NoiseKind::GroupFlip { group_tag } => check_group(d, group_tag).map(|_| ()),
        }
    }
}

fn check_rate(rate: f64) -> Result<(), NoiseError> {
    if (0.0..=1.0).contains(&rate) {
        Ok(())
    } else {
        Err(NoiseError::BadRate(rate))
    }
}

fn check_label(d: &Dataset, l: Label) -> Result<(), NoiseError> {
    if d.label_set().contains(&l) {
        Ok(())
    } else {
        Err(NoiseError::UnknownLabel(l))
    }
}

fn check_pair(d: &Dataset, a: Label, b: Label) -> Result<(), NoiseError> {
    check_label(d, a)?;
    check_label(d, b)?;
    if a == b {
        return Err(NoiseError::IdenticalPair(a));
    }
    Ok(())
}

fn check_occlusion(d: &Dataset, area_fraction: f64) -> Result<[usize; 3], NoiseError> {
    let shape = d.feature_shape().ok_or(NoiseError::NoShape)?;
    if !(area_fraction > 0.0 && area_fraction < 1.0) {
        return Err(NoiseError::BadAreaFraction(area_fraction));
    }
    Ok(shape)
}

fn check_group(d: &Dataset, tag: &str) -> Result<[Label; 2], NoiseError> {
    let labels = d.label_set();
    if labels.len() != 2 {
        return Err(NoiseError::NotBinary(labels.len()));
    }
    if !d.instances().iter().any(|i| i.has_group(tag)) {
        return Err(NoiseError::UnknownGroup(tag.to_string()));
    }
    Ok([labels[0], labels[1]])
}

#[inline]
fn selected(seed: u64, inst: &Instance, rate: f64) -> bool {
    instance_rng(seed, &inst.id).random::<f64>() < rate
}

/// Swaps labels within the pair `(a, b)`: each instance of either class takes
/// the other label with probability `rate`.
pub fn inject_label_noise(
    d: &Dataset,
    pair: (Label, Label),
    rate: f64,
    seed: u64,
) -> Result<Dataset, NoiseError> {
    let (a, b) = pair;
    check_rate(rate)?;
    check_pair(d, a, b)?;
    let instances = d
        .instances()
        .iter()
        .map(|inst| {
            let other = if inst.label == a {
                b
            } else if inst.label == b {
                a
            } else {
                return inst.clone();
            };
            if selected(seed, inst, rate) {
                Instance {
                    label: other,
                    ..inst.clone()
                }
            } else {
                inst.clone()
            }
        })
        .collect();
    Ok(d.with_instances(instances)?)
}

/// Rectangle `(height, width)` covering at least `ceil(fraction * h * w)` pixels.
///
/// Near-square: height is `ceil(sqrt(area))` clipped to the image, width is
/// the smallest that reaches the area, clipped likewise. The area is exact
/// whenever it factors as `height * width`.
pub fn occlusion_rect(h: usize, w: usize, area_fraction: f64) -> (usize, usize) {
    let area = (area_fraction * (h * w) as f64).ceil().max(1.0) as usize;
    let rh = ((area as f64).sqrt().ceil() as usize).clamp(1, h);
    let rw = area.div_ceil(rh).clamp(1, w);
    (rh, rw)
}

/// Occludes target-class images with one constant-filled rectangle at a
/// uniform position, with probability `rate` per image. Labels are untouched.
pub fn inject_feature_occlusion(
    d: &Dataset,
    target_label: Label,
    rate: f64,
    area_fraction: f64,
    fill_value: f64,
    seed: u64,
) -> Result<Dataset, NoiseError> {
    check_rate(rate)?;
    let [h, w, c] = check_occlusion(d, area_fraction)?;
    check_label(d, target_label)?;
    let (rh, rw) = occlusion_rect(h, w, area_fraction);
    let instances = d
        .instances()
        .iter()
        .map(|inst| {
            if inst.label != target_label {
                return inst.clone();
            }
            let mut rng = instance_rng(seed, &inst.id);
            if rng.random::<f64>() >= rate {
                return inst.clone();
            }
            let top = rng.random_range(0..=h - rh);
            let left = rng.random_range(0..=w - rw);
            let mut features = inst.features.clone();
            for row in top..top + rh {
                for col in left..left + rw {
                    let base = (row * w + col) * c;
                    features[base..base + c].fill(fill_value);
                }
            }
            Instance {
                features,
                ..inst.clone()
            }
        })
        .collect();
    Ok(d.with_instances(instances)?)
}

/// Turns `outlier_label` into out-of-task noise: the label leaves the label
/// set, and each of its instances is kept under `target_label` with
/// probability `rate` or dropped otherwise.
pub fn inject_outlier_noise(
    base: &Dataset,
    outlier_label: Label,
    target_label: Label,
    rate: f64,
    seed: u64,
) -> Result<Dataset, NoiseError> {
    check_rate(rate)?;
    check_pair(base, outlier_label, target_label)?;
    let label_set: Vec<Label> = base
        .label_set()
        .iter()
        .copied()
        .filter(|&l| l != outlier_label)
        .collect();
    let instances = base
        .instances()
        .iter()
        .filter_map(|inst| {
            if inst.label != outlier_label {
                Some(inst.clone())
            } else if selected(seed, inst, rate) {
                Some(Instance {
                    label: target_label,
                    ..inst.clone()
                })
            } else {
                None
            }
        })
        .collect();
    Ok(Dataset::new(
        base.name(),
        label_set,
        base.feature_shape(),
        instances,
    )?)
}

/// Drops every instance of `label` and removes it from the label set, which
/// is the clean counterpart of [`inject_outlier_noise`] for test sets.
pub fn remove_label(d: &Dataset, label: Label) -> Result<Dataset, NoiseError> {
    check_label(d, label)?;
    let label_set = d
        .label_set()
        .iter()
        .copied()
        .filter(|&l| l != label)
        .collect();
    let instances = d
        .instances()
        .iter()
        .filter(|i| i.label != label)
        .cloned()
        .collect();
    Ok(Dataset::new(
        d.name(),
        label_set,
        d.feature_shape(),
        instances,
    )?)
}

/// Flips the binary label of instances tagged `group_tag` with probability `rate`.
pub fn inject_group_flip(
    d: &Dataset,
    group_tag: &str,
    rate: f64,
    seed: u64,
) -> Result<Dataset, NoiseError> {
    check_rate(rate)?;
    let [a, b] = check_group(d, group_tag)?;
    let instances = d
        .instances()
        .iter()
        .map(|inst| {
            if inst.has_group(group_tag) && selected(seed, inst, rate) {
                Instance {
                    label: if inst.label == a { b } else { a },
                    ..inst.clone()
                }
            } else {
                inst.clone()
            }
        })
        .collect();
    Ok(d.with_instances(instances)?)
}
