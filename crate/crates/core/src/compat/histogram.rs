use serde::{Deserialize, Serialize};

use super::{CompatError, UpdateComparison};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    H1,
    H2,
}

impl Which {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "h1" => Some(Which::H1),
            "h2" => Some(Which::H2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceHistogram {
    pub model: Which,
    /// `bins + 1` uniform edges from `1/|labels|` to 1.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl ConfidenceHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Histogram of one model's confidences over the incompatible points.
///
/// The range is `[1/|labels|, 1]`, the span a max-softmax score can take. Bins
/// are half-open except the last, which includes 1. Scores below the lower
/// edge land in the first bin.
pub fn confidence_histogram(
    cmp: &UpdateComparison,
    which: Which,
    bins: usize,
) -> Result<ConfidenceHistogram, CompatError> {
    if bins == 0 {
        return Err(CompatError::ZeroBins);
    }
    let lower = 1.0 / cmp.label_set().len() as f64;
    let width = (1.0 - lower) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| {
            if i == bins {
                1.0
            } else {
                lower + width * i as f64
            }
        })
        .collect();

    let mut counts = vec![0usize; bins];
    let mut missing = Vec::new();
    for (a, b) in cmp.pairs() {
        if !(a.is_correct() && !b.is_correct()) {
            continue;
        }
        let rec = match which {
            Which::H1 => a,
            Which::H2 => b,
        };
        match rec.confidence {
            None => missing.push(rec.example_id.clone()),
            Some(c) => {
                let idx = if width > 0.0 {
                    (((c - lower) / width).floor().max(0.0) as usize).min(bins - 1)
                } else {
                    0
                };
                counts[idx] += 1;
            }
        }
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(CompatError::MissingConfidence(missing));
    }
    Ok(ConfidenceHistogram {
        model: which,
        edges,
        counts,
    })
}
