//! Dense labeled datasets and their JSON Lines file format.
//!
//! File layout: a header `{"label_set": [...], "feature_shape": [h, w, c] | null}`
//! followed by one `{"id", "x": [floats], "y", "groups": [...] | null}` per line.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::jsonl::{self, Fields, LineError};
use crate::Label;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<LineError> for DatasetError {
    fn from(e: LineError) -> Self {
        DatasetError::Parse {
            line: e.line,
            message: e.message,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub features: Vec<f64>,
    pub label: Label,
    pub groups: Option<Vec<String>>,
}

impl Instance {
    pub fn new(id: impl Into<String>, features: Vec<f64>, label: Label) -> Self {
        Self {
            id: id.into(),
            features,
            label,
            groups: None,
        }
    }

    pub fn has_group(&self, tag: &str) -> bool {
        self.groups.iter().flatten().any(|g| g == tag)
    }
}

/// `(height, width, channels)` of image-like features, stored row-major with
/// channels innermost.
pub type FeatureShape = [usize; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    label_set: Vec<Label>,
    feature_shape: Option<FeatureShape>,
    feature_dim: usize,
    instances: Vec<Instance>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        label_set: Vec<Label>,
        feature_shape: Option<FeatureShape>,
        instances: Vec<Instance>,
    ) -> Result<Self, DatasetError> {
        crate::compat::validate_label_set(&label_set).map_err(DatasetError::Invalid)?;
        let feature_dim = match (feature_shape, instances.first()) {
            (Some([h, w, c]), _) => h * w * c,
            (None, Some(first)) => first.features.len(),
            (None, None) => 0,
        };
        let labels: HashSet<Label> = label_set.iter().copied().collect();
        let mut ids = HashSet::with_capacity(instances.len());
        for inst in &instances {
            if inst.features.len() != feature_dim {
                return Err(DatasetError::Invalid(format!(
                    "instance '{}' has {} features, expected {feature_dim}",
                    inst.id,
                    inst.features.len()
                )));
            }
            if !labels.contains(&inst.label) {
                return Err(DatasetError::Invalid(format!(
                    "instance '{}' has label {} outside the label set",
                    inst.id, inst.label
                )));
            }
            if !ids.insert(inst.id.as_str()) {
                return Err(DatasetError::Invalid(format!("duplicate id '{}'", inst.id)));
            }
        }
        Ok(Self {
            name: name.into(),
            label_set,
            feature_shape,
            feature_dim,
            instances,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn label_set(&self) -> &[Label] {
        &self.label_set
    }

    pub fn feature_shape(&self) -> Option<FeatureShape> {
        self.feature_shape
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.instances.iter().map(|i| i.id.as_str())
    }

    /// Same metadata, new instances (validated).
    pub fn with_instances(&self, instances: Vec<Instance>) -> Result<Self, DatasetError> {
        Dataset::new(
            self.name.clone(),
            self.label_set.clone(),
            self.feature_shape,
            instances,
        )
    }

    /// The first `n` instances, in file order.
    pub fn head(&self, n: usize) -> Dataset {
        Dataset {
            instances: self.instances.iter().take(n).cloned().collect(),
            ..self.clone()
        }
    }

    /// Ids of `self` that are missing from `other`.
    pub fn ids_missing_from(&self, other: &Dataset) -> Vec<String> {
        let theirs: HashSet<&str> = other.ids().collect();
        self.ids()
            .filter(|id| !theirs.contains(id))
            .map(String::from)
            .collect()
    }

    pub fn label_counts(&self) -> HashMap<Label, usize> {
        let mut counts = HashMap::new();
        for i in &self.instances {
            *counts.entry(i.label).or_insert(0) += 1;
        }
        counts
    }

    pub fn group_tags(&self) -> BTreeSet<&str> {
        self.instances
            .iter()
            .flat_map(|i| i.groups.iter().flatten())
            .map(String::as_str)
            .collect()
    }
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset");
    parse_dataset(&text, name)
}

pub fn parse_dataset(text: &str, name: &str) -> Result<Dataset, DatasetError> {
    let mut lines = jsonl::lines(text);
    let (hline, htext) = lines.next().ok_or(DatasetError::Parse {
        line: 1,
        message: "empty file; expected a header line".into(),
    })?;
    let header = jsonl::object(hline, htext)?;
    let hf = Fields::new(hline, &header);
    let label_set = hf.labels("label_set")?;
    crate::compat::validate_label_set(&label_set).map_err(|m| LineError::new(hline, m))?;
    let feature_shape = match hf.opt_usizes("feature_shape")? {
        None => None,
        Some(v) if v.len() == 3 => Some([v[0], v[1], v[2]]),
        Some(v) => {
            return Err(LineError::new(
                hline,
                format!("feature_shape must have 3 entries, got {}", v.len()),
            )
            .into())
        }
    };
    let labels: HashSet<Label> = label_set.iter().copied().collect();
    let mut dim = feature_shape.map(|[h, w, c]| h * w * c);
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut instances = Vec::new();
    for (line, text) in lines {
        let obj = jsonl::object(line, text)?;
        let f = Fields::new(line, &obj);
        let inst = Instance {
            id: f.string("id")?,
            features: f.floats("x")?,
            label: f.label("y")?,
            groups: f.opt_strings("groups")?,
        };
        let expected = *dim.get_or_insert(inst.features.len());
        if inst.features.len() != expected {
            return Err(LineError::new(
                line,
                format!("expected {expected} features, got {}", inst.features.len()),
            )
            .into());
        }
        if !labels.contains(&inst.label) {
            return Err(LineError::new(
                line,
                format!("label {} is not in the label set", inst.label),
            )
            .into());
        }
        if let Some(first) = seen.insert(inst.id.clone(), line) {
            return Err(LineError::new(
                line,
                format!("duplicate id '{}' (first seen on line {first})", inst.id),
            )
            .into());
        }
        instances.push(inst);
    }
    Dataset::new(name, label_set, feature_shape, instances)
}

#[derive(Serialize)]
struct HeaderOut<'a> {
    label_set: &'a [Label],
    feature_shape: Option<FeatureShape>,
}

#[derive(Serialize)]
struct InstanceOut<'a> {
    id: &'a str,
    x: &'a [f64],
    y: Label,
    groups: Option<&'a [String]>,
}

pub fn write_dataset<W: Write>(d: &Dataset, mut w: W) -> std::io::Result<()> {
    serde_json::to_writer(
        &mut w,
        &HeaderOut {
            label_set: &d.label_set,
            feature_shape: d.feature_shape,
        },
    )?;
    w.write_all(b"\n")?;
    for i in &d.instances {
        serde_json::to_writer(
            &mut w,
            &InstanceOut {
                id: &i.id,
                x: &i.features,
                y: i.label,
                groups: i.groups.as_deref(),
            },
        )?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset::new(
            "tiny",
            vec![0, 1],
            Some([1, 2, 1]),
            vec![
                Instance::new("a", vec![0.5, -1.25], 0),
                Instance {
                    groups: Some(vec!["genre:comedy".into()]),
                    ..Instance::new("b", vec![1e-3, 3.0], 1)
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let d = tiny();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(r#"{"label_set":[0,1],"feature_shape":[1,2,1]}"#));
        let back = parse_dataset(&text, "tiny").unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn rejects_inconsistent_shapes() {
        let err = Dataset::new(
            "d",
            vec![0],
            Some([2, 2, 1]),
            vec![Instance::new("a", vec![0.0; 3], 0)],
        );
        assert!(err.is_err());
        let text = "{\"label_set\":[0],\"feature_shape\":null}\n{\"id\":\"a\",\"x\":[1,2],\"y\":0}\n{\"id\":\"b\",\"x\":[1],\"y\":0}\n";
        assert!(matches!(
            parse_dataset(text, "d"),
            Err(DatasetError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn rejects_unknown_labels_and_duplicates() {
        let text = "{\"label_set\":[0,1]}\n{\"id\":\"a\",\"x\":[1],\"y\":2}\n";
        assert!(matches!(
            parse_dataset(text, "d"),
            Err(DatasetError::Parse { line: 2, .. })
        ));
        let text = "{\"label_set\":[0,1]}\n{\"id\":\"a\",\"x\":[1],\"y\":1}\n{\"id\":\"a\",\"x\":[1],\"y\":1}\n";
        assert!(matches!(
            parse_dataset(text, "d"),
            Err(DatasetError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn subset_helpers() {
        let d = tiny();
        let small = d.head(1);
        assert_eq!(small.len(), 1);
        assert!(small.ids_missing_from(&d).is_empty());
        assert_eq!(d.ids_missing_from(&small), vec!["b".to_string()]);
        assert_eq!(
            d.group_tags().into_iter().collect::<Vec<_>>(),
            vec!["genre:comedy"]
        );
    }
}
