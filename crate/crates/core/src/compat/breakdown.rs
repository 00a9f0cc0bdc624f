use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CompatError, PredictionRecord, Quadrant, Quadrants, UpdateComparison};
use crate::Label;

/// Row key used for records without a tag in the requested namespace.
pub const UNTAGGED: &str = "(untagged)";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Grouping {
    ByTrueLabel,
    /// Groups by tags of the form `namespace:value`. A record with several
    /// tags in the namespace is assigned to the lexicographically first one.
    ByTag(String),
}

impl Grouping {
    /// Parses `label` or `tag:<namespace>`.
    pub fn parse(s: &str) -> Option<Self> {
        if s == "label" {
            Some(Grouping::ByTrueLabel)
        } else {
            s.strip_prefix("tag:")
                .filter(|ns| !ns.is_empty())
                .map(|ns| Grouping::ByTag(ns.to_string()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub n: usize,
    pub acc_h1: f64,
    pub acc_h2: f64,
    pub gain: f64,
    pub incompatible_count: usize,
    /// This group's incompatible points over all incompatible points (0 when there are none).
    pub incompatible_share: f64,
    pub quadrants: Quadrants,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Key {
    Label(Label),
    Tag(String),
    Untagged,
}

impl Key {
    fn render(&self) -> String {
        match self {
            Key::Label(l) => l.to_string(),
            Key::Tag(t) => t.clone(),
            Key::Untagged => UNTAGGED.to_string(),
        }
    }
}

fn tag_key(record: &PredictionRecord, prefix: &str) -> Key {
    record
        .groups
        .iter()
        .flatten()
        .filter(|t| t.starts_with(prefix))
        .min()
        .map_or(Key::Untagged, |t| Key::Tag(t.clone()))
}

/// Per-group accuracies, gains and incompatible-point shares.
///
/// Rows partition the aligned points, so their quadrant counts add up to the
/// global ones. Tag groups are keyed on the `h1` record's tags.
pub fn group_breakdown(
    cmp: &UpdateComparison,
    grouping: &Grouping,
) -> Result<Vec<GroupRow>, CompatError> {
    let prefix = match grouping {
        Grouping::ByTrueLabel => None,
        Grouping::ByTag(ns) => {
            let prefix = format!("{ns}:");
            let any = cmp
                .pairs()
                .any(|(a, _)| a.groups.iter().flatten().any(|t| t.starts_with(&prefix)));
            if !any {
                return Err(CompatError::UnknownTagNamespace(ns.clone()));
            }
            Some(prefix)
        }
    };

    let mut groups: BTreeMap<Key, Quadrants> = BTreeMap::new();
    for (a, b) in cmp.pairs() {
        let key = match &prefix {
            None => Key::Label(a.true_label),
            Some(p) => tag_key(a, p),
        };
        groups
            .entry(key)
            .or_default()
            .add(Quadrant::of(a.is_correct(), b.is_correct()));
    }

    let total_incompatible: usize = groups.values().map(|q| q.h1c_h2w).sum();
    Ok(groups
        .into_iter()
        .map(|(key, q)| {
            let n = q.total();
            let acc_h1 = q.h1_correct() as f64 / n as f64;
            let acc_h2 = q.h2_correct() as f64 / n as f64;
            GroupRow {
                group: key.render(),
                n,
                acc_h1,
                acc_h2,
                gain: acc_h2 - acc_h1,
                incompatible_count: q.h1c_h2w,
                incompatible_share: if total_incompatible == 0 {
                    0.0
                } else {
                    q.h1c_h2w as f64 / total_incompatible as f64
                },
                quadrants: q,
            }
        })
        .collect())
}
