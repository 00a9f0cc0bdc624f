//! Backward-compatibility metrics over aligned prediction logs.
//!
//! Every test point of an update falls into one of four quadrants according to
//! whether the old model `h1` and the new model `h2` classify it correctly:
//!
//! | h1 \ h2  | correct        | wrong                      |
//! |----------|----------------|----------------------------|
//! | correct  | `both_correct` | `h1c_h2w` (incompatible)   |
//! | wrong    | `h1w_h2c`      | `both_wrong`               |
//!
//! BTC (backward trust compatibility) is the share of `h1`'s correct points
//! that `h2` keeps correct; BEC (backward error compatibility) is the share of
//! `h2`'s errors that `h1` also made. Both ratios are defined as 1.0 when their
//! denominator is empty, and the report carries a flag saying so.

mod breakdown;
mod histogram;
mod log_io;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Label;

pub use breakdown::{group_breakdown, GroupRow, Grouping};
pub use histogram::{confidence_histogram, ConfidenceHistogram, Which};
pub use log_io::{
    read_log, read_log_csv, read_log_jsonl, write_log_csv, write_log_jsonl, LogFormat,
};

#[derive(Debug, Error)]
pub enum CompatError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid prediction log: {0}")]
    InvalidLog(String),
    #[error("label sets differ: h1 has {h1:?}, h2 has {h2:?}")]
    LabelSetMismatch { h1: Vec<Label>, h2: Vec<Label> },
    #[error(
        "example ids differ: {only_h1} only in h1 (e.g. {sample_h1:?}), {only_h2} only in h2 (e.g. {sample_h2:?}); pass allow-partial to compare the intersection"
    )]
    IdSetMismatch {
        only_h1: usize,
        only_h2: usize,
        sample_h1: Vec<String>,
        sample_h2: Vec<String>,
    },
    #[error("the two logs share no example ids")]
    EmptyIntersection,
    #[error("no record carries a tag in namespace '{0}'")]
    UnknownTagNamespace(String),
    #[error("incompatible records without confidence: {0:?}")]
    MissingConfidence(Vec<String>),
    #[error("bin count must be positive")]
    ZeroBins,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One model's prediction for one test example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub example_id: String,
    pub true_label: Label,
    pub predicted_label: Label,
    /// Score of the predicted label (max softmax probability).
    pub confidence: Option<f64>,
    pub groups: Option<Vec<String>>,
}

impl PredictionRecord {
    pub fn new(example_id: impl Into<String>, true_label: Label, predicted_label: Label) -> Self {
        Self {
            example_id: example_id.into(),
            true_label,
            predicted_label,
            confidence: None,
            groups: None,
        }
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = Some(confidence);
        self
    }

    pub fn with_groups<I, S>(mut self, groups: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.groups = Some(groups.into_iter().map(Into::into).collect());
        self
    }

    #[inline]
    pub fn is_correct(&self) -> bool {
        self.true_label == self.predicted_label
    }
}

/// A model's labeled predictions over a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionLog {
    model_id: String,
    label_set: Vec<Label>,
    records: Vec<PredictionRecord>,
}

impl PredictionLog {
    /// Builds a log, checking id uniqueness, label membership and confidence range.
    pub fn new(
        model_id: impl Into<String>,
        label_set: Vec<Label>,
        records: Vec<PredictionRecord>,
    ) -> Result<Self, CompatError> {
        validate_label_set(&label_set).map_err(CompatError::InvalidLog)?;
        let mut seen = BTreeSet::new();
        for r in &records {
            check_record(r, &label_set).map_err(CompatError::InvalidLog)?;
            if !seen.insert(r.example_id.as_str()) {
                return Err(CompatError::InvalidLog(format!(
                    "duplicate example id '{}'",
                    r.example_id
                )));
            }
        }
        Ok(Self {
            model_id: model_id.into(),
            label_set,
            records,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn label_set(&self) -> &[Label] {
        &self.label_set
    }

    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn accuracy(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let correct = self.records.iter().filter(|r| r.is_correct()).count();
        correct as f64 / self.records.len() as f64
    }
}

pub(crate) fn validate_label_set(label_set: &[Label]) -> Result<(), String> {
    if label_set.is_empty() {
        return Err("label_set is empty".into());
    }
    let mut seen = BTreeSet::new();
    for l in label_set {
        if !seen.insert(*l) {
            return Err(format!("label_set contains {l} more than once"));
        }
    }
    Ok(())
}

pub(crate) fn check_record(r: &PredictionRecord, label_set: &[Label]) -> Result<(), String> {
    if !label_set.contains(&r.true_label) {
        return Err(format!(
            "example '{}': true label {} is not in the label set",
            r.example_id, r.true_label
        ));
    }
    if !label_set.contains(&r.predicted_label) {
        return Err(format!(
            "example '{}': predicted label {} is not in the label set",
            r.example_id, r.predicted_label
        ));
    }
    if let Some(c) = r.confidence {
        if !(0.0..=1.0).contains(&c) {
            return Err(format!(
                "example '{}': confidence {c} outside [0, 1]",
                r.example_id
            ));
        }
    }
    Ok(())
}

/// An aligned `(h1, h2)` pair of logs over a shared set of example ids.
#[derive(Debug, Clone)]
pub struct UpdateComparison {
    log_h1: PredictionLog,
    log_h2: PredictionLog,
    /// Record indices `(in h1, in h2)`, in `log_h1` order.
    pairs: Vec<(usize, usize)>,
}

/// Aligns two logs on example id.
///
/// Strict by default: unless `allow_partial` is set, both logs must cover the
/// same ids. Aligned ids follow `log_h1`'s record order.
pub fn align(
    log_h1: PredictionLog,
    log_h2: PredictionLog,
    allow_partial: bool,
) -> Result<UpdateComparison, CompatError> {
    if log_h1.label_set != log_h2.label_set {
        return Err(CompatError::LabelSetMismatch {
            h1: log_h1.label_set.clone(),
            h2: log_h2.label_set.clone(),
        });
    }
    let index_h2: HashMap<&str, usize> = log_h2
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.example_id.as_str(), i))
        .collect();

    let mut pairs = Vec::with_capacity(log_h1.len().min(log_h2.len()));
    let mut only_h1 = Vec::new();
    for (i, r) in log_h1.records.iter().enumerate() {
        match index_h2.get(r.example_id.as_str()) {
            Some(&j) => pairs.push((i, j)),
            None => only_h1.push(r.example_id.clone()),
        }
    }
    let only_h2 = log_h2.len() - pairs.len();
    if !allow_partial && (!only_h1.is_empty() || only_h2 > 0) {
        let in_h1: BTreeSet<&str> = log_h1
            .records
            .iter()
            .map(|r| r.example_id.as_str())
            .collect();
        let sample_h2 = log_h2
            .records
            .iter()
            .filter(|r| !in_h1.contains(r.example_id.as_str()))
            .take(3)
            .map(|r| r.example_id.clone())
            .collect();
        return Err(CompatError::IdSetMismatch {
            only_h1: only_h1.len(),
            only_h2,
            sample_h1: only_h1.into_iter().take(3).collect(),
            sample_h2,
        });
    }
    if pairs.is_empty() {
        return Err(CompatError::EmptyIntersection);
    }
    Ok(UpdateComparison {
        log_h1,
        log_h2,
        pairs,
    })
}

impl UpdateComparison {
    pub fn log_h1(&self) -> &PredictionLog {
        &self.log_h1
    }

    pub fn log_h2(&self) -> &PredictionLog {
        &self.log_h2
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn label_set(&self) -> &[Label] {
        &self.log_h1.label_set
    }

    pub fn aligned_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.pairs
            .iter()
            .map(|&(i, _)| self.log_h1.records[i].example_id.as_str())
    }

    /// Aligned record pairs in `log_h1` order.
    pub fn pairs(&self) -> impl Iterator<Item = (&PredictionRecord, &PredictionRecord)> + '_ {
        self.pairs
            .iter()
            .map(|&(i, j)| (&self.log_h1.records[i], &self.log_h2.records[j]))
    }

    /// The same comparison with the roles of the two models exchanged.
    pub fn swapped(&self) -> UpdateComparison {
        let mut pairs: Vec<(usize, usize)> = self.pairs.iter().map(|&(i, j)| (j, i)).collect();
        pairs.sort_unstable();
        UpdateComparison {
            log_h1: self.log_h2.clone(),
            log_h2: self.log_h1.clone(),
            pairs,
        }
    }

    pub fn quadrants(&self) -> Quadrants {
        Quadrants::from_pairs(self.pairs())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quadrants {
    pub both_correct: usize,
    pub both_wrong: usize,
    /// Incompatible: correct under h1, wrong under h2.
    pub h1c_h2w: usize,
    /// Fixed: wrong under h1, correct under h2.
    pub h1w_h2c: usize,
}

impl Quadrants {
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a PredictionRecord, &'a PredictionRecord)>,
    ) -> Self {
        let mut q = Quadrants::default();
        for (a, b) in pairs {
            q.add(Quadrant::of(a.is_correct(), b.is_correct()));
        }
        q
    }

    pub fn add(&mut self, quadrant: Quadrant) {
        match quadrant {
            Quadrant::BothCorrect => self.both_correct += 1,
            Quadrant::BothWrong => self.both_wrong += 1,
            Quadrant::H1CorrectH2Wrong => self.h1c_h2w += 1,
            Quadrant::H1WrongH2Correct => self.h1w_h2c += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.both_correct + self.both_wrong + self.h1c_h2w + self.h1w_h2c
    }

    pub fn h1_correct(&self) -> usize {
        self.both_correct + self.h1c_h2w
    }

    pub fn h2_correct(&self) -> usize {
        self.both_correct + self.h1w_h2c
    }

    pub fn h2_wrong(&self) -> usize {
        self.both_wrong + self.h1c_h2w
    }

    pub fn btc(&self) -> Score {
        Score::ratio(self.both_correct, self.h1_correct())
    }

    pub fn bec(&self) -> Score {
        Score::ratio(self.both_wrong, self.h2_wrong())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrant {
    BothCorrect,
    BothWrong,
    #[serde(rename = "h1c_h2w")]
    H1CorrectH2Wrong,
    #[serde(rename = "h1w_h2c")]
    H1WrongH2Correct,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::BothCorrect,
        Quadrant::BothWrong,
        Quadrant::H1CorrectH2Wrong,
        Quadrant::H1WrongH2Correct,
    ];

    pub fn of(h1_correct: bool, h2_correct: bool) -> Self {
        match (h1_correct, h2_correct) {
            (true, true) => Quadrant::BothCorrect,
            (false, false) => Quadrant::BothWrong,
            (true, false) => Quadrant::H1CorrectH2Wrong,
            (false, true) => Quadrant::H1WrongH2Correct,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Quadrant::BothCorrect => "both_correct",
            Quadrant::BothWrong => "both_wrong",
            Quadrant::H1CorrectH2Wrong => "h1c_h2w",
            Quadrant::H1WrongH2Correct => "h1w_h2c",
        }
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A compatibility ratio and whether its denominator was empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub value: f64,
    pub denom_zero: bool,
}

impl Score {
    fn ratio(num: usize, den: usize) -> Self {
        if den == 0 {
            Score {
                value: 1.0,
                denom_zero: true,
            }
        } else {
            Score {
                value: num as f64 / den as f64,
                denom_zero: false,
            }
        }
    }
}

/// Backward trust compatibility: fraction of h1's correct points h2 keeps.
pub fn btc(cmp: &UpdateComparison) -> Score {
    cmp.quadrants().btc()
}

/// Backward error compatibility: fraction of h2's errors that h1 also made.
pub fn bec(cmp: &UpdateComparison) -> Score {
    cmp.quadrants().bec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DegenerateFlag {
    BtcDenomZero,
    BecDenomZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub model_h1: String,
    pub model_h2: String,
    pub n: usize,
    pub btc: f64,
    pub bec: f64,
    pub quadrants: Quadrants,
    pub acc_h1: f64,
    pub acc_h2: f64,
    pub accuracy_gain: f64,
    pub degenerate_flags: BTreeSet<DegenerateFlag>,
    /// Sorted by example id.
    pub incompatible_ids: Vec<String>,
}

impl CompatibilityReport {
    pub fn has_flag(&self, flag: DegenerateFlag) -> bool {
        self.degenerate_flags.contains(&flag)
    }

    pub fn summary_line(&self) -> String {
        format!(
            "BTC={:.4} BEC={:.4} ΔAcc={:+.4}",
            self.btc, self.bec, self.accuracy_gain
        )
    }
}

pub fn compare(cmp: &UpdateComparison) -> CompatibilityReport {
    let q = cmp.quadrants();
    let n = q.total();
    let btc = q.btc();
    let bec = q.bec();
    let mut flags = BTreeSet::new();
    if btc.denom_zero {
        flags.insert(DegenerateFlag::BtcDenomZero);
    }
    if bec.denom_zero {
        flags.insert(DegenerateFlag::BecDenomZero);
    }
    let acc_h1 = q.h1_correct() as f64 / n as f64;
    let acc_h2 = q.h2_correct() as f64 / n as f64;
    let mut incompatible_ids: Vec<String> = cmp
        .pairs()
        .filter(|(a, b)| a.is_correct() && !b.is_correct())
        .map(|(a, _)| a.example_id.clone())
        .collect();
    incompatible_ids.sort();
    CompatibilityReport {
        model_h1: cmp.log_h1.model_id.clone(),
        model_h2: cmp.log_h2.model_id.clone(),
        n,
        btc: btc.value,
        bec: bec.value,
        quadrants: q,
        acc_h1,
        acc_h2,
        accuracy_gain: acc_h2 - acc_h1,
        degenerate_flags: flags,
        incompatible_ids,
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Builds a log over ids "1".."n" from correctness bits on a binary task.
    pub fn binary_log(model: &str, correct: &[bool]) -> PredictionLog {
        let records = correct
            .iter()
            .enumerate()
            .map(|(i, &c)| PredictionRecord::new((i + 1).to_string(), 0, if c { 0 } else { 1 }))
            .collect();
        PredictionLog::new(model, vec![0, 1], records).unwrap()
    }

    /// Ten points; h1 correct on 1..=7, h2 correct on 1..=6 and 8.
    pub fn ten_point() -> UpdateComparison {
        let h1: Vec<bool> = (1..=10).map(|i| i <= 7).collect();
        let h2: Vec<bool> = (1..=10).map(|i| i <= 6 || i == 8).collect();
        align(binary_log("h1", &h1), binary_log("h2", &h2), false).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn align_identical_logs() {
        let log = binary_log("m", &[true; 10]);
        let cmp = align(log.clone(), log, false).unwrap();
        assert_eq!(cmp.len(), 10);
    }

    #[test]
    fn align_partial_intersection_keeps_h1_order() {
        let a = binary_log("a", &[true; 10]);
        let b = binary_log("b", &[true; 8]);
        let cmp = align(a.clone(), b.clone(), true).unwrap();
        assert_eq!(cmp.len(), 8);
        let ids: Vec<&str> = cmp.aligned_ids().collect();
        assert_eq!(ids, vec!["1", "2", "3", "4", "5", "6", "7", "8"]);
        assert!(matches!(
            align(a, b, false),
            Err(CompatError::IdSetMismatch {
                only_h1: 2,
                only_h2: 0,
                ..
            })
        ));
    }

    #[test]
    fn align_rejects_label_set_mismatch() {
        let a = binary_log("a", &[true; 3]);
        let recs = a.records().to_vec();
        let b = PredictionLog::new("b", vec![0, 1, 2], recs).unwrap();
        assert!(matches!(
            align(a, b, false),
            Err(CompatError::LabelSetMismatch { .. })
        ));
    }

    #[test]
    fn align_rejects_disjoint_ids() {
        let a = binary_log("a", &[true; 3]);
        let recs = vec![PredictionRecord::new("x", 0, 0)];
        let b = PredictionLog::new("b", vec![0, 1], recs).unwrap();
        assert!(matches!(
            align(a, b, true),
            Err(CompatError::EmptyIntersection)
        ));
    }

    #[test]
    fn log_validation() {
        let dup = vec![
            PredictionRecord::new("a", 0, 0),
            PredictionRecord::new("a", 1, 1),
        ];
        assert!(PredictionLog::new("m", vec![0, 1], dup).is_err());
        let bad_label = vec![PredictionRecord::new("a", 0, 3)];
        assert!(PredictionLog::new("m", vec![0, 1], bad_label).is_err());
        let bad_conf = vec![PredictionRecord::new("a", 0, 0).with_confidence(1.5)];
        assert!(PredictionLog::new("m", vec![0, 1], bad_conf).is_err());
        assert!(PredictionLog::new("m", vec![], vec![]).is_err());
        assert!(PredictionLog::new("m", vec![1, 1], vec![]).is_err());
    }

    #[test]
    fn ten_point_fixture() {
        let cmp = ten_point();
        let b = btc(&cmp);
        assert_eq!(b.value, 6.0 / 7.0);
        assert!(!b.denom_zero);
        assert!((b.value - 0.8571).abs() < 1e-4);
        let e = bec(&cmp);
        assert_eq!(e.value, 2.0 / 3.0);
        assert!((e.value - 0.6667).abs() < 1e-4);

        let report = compare(&cmp);
        assert_eq!(
            report.quadrants,
            Quadrants {
                both_correct: 6,
                both_wrong: 2,
                h1c_h2w: 1,
                h1w_h2c: 1
            }
        );
        assert_eq!(report.accuracy_gain, 0.0);
        assert_eq!(report.incompatible_ids, vec!["7".to_string()]);
        assert!(report.degenerate_flags.is_empty());
    }

    #[test]
    fn identity_update_is_fully_compatible() {
        let log = binary_log("m", &[true, false, true, true, false]);
        let report = compare(&align(log.clone(), log, false).unwrap());
        assert_eq!(report.btc, 1.0);
        assert_eq!(report.bec, 1.0);
        assert_eq!(report.quadrants.h1c_h2w, 0);
        assert_eq!(report.accuracy_gain, 0.0);
    }

    #[test]
    fn degenerate_denominators() {
        let h1 = binary_log("h1", &[false; 4]);
        let h2 = binary_log("h2", &[false, false, true, false]);
        let cmp = align(h1.clone(), h2, false).unwrap();
        assert_eq!(
            btc(&cmp),
            Score {
                value: 1.0,
                denom_zero: true
            }
        );

        let perfect = binary_log("h2", &[true; 4]);
        let cmp = align(
            binary_log("h1", &[true, false, true, true]),
            perfect.clone(),
            false,
        )
        .unwrap();
        assert_eq!(
            bec(&cmp),
            Score {
                value: 1.0,
                denom_zero: true
            }
        );

        // h1 all wrong and h2 all right: both denominators are empty.
        let report = compare(&align(h1, perfect, false).unwrap());
        assert_eq!(report.accuracy_gain, 1.0);
        assert!(report.has_flag(DegenerateFlag::BecDenomZero));
        assert!(report.has_flag(DegenerateFlag::BtcDenomZero));
    }

    #[test]
    fn disjoint_errors_give_zero_bec() {
        let h1 = binary_log("h1", &[false, false, true, true]);
        let h2 = binary_log("h2", &[true, true, false, true]);
        let cmp = align(h1, h2, false).unwrap();
        assert_eq!(bec(&cmp).value, 0.0);
    }

    #[test]
    fn swap_exchanges_off_diagonal() {
        let cmp = ten_point();
        let q = cmp.quadrants();
        let s = cmp.swapped().quadrants();
        assert_eq!(s.both_correct, q.both_correct);
        assert_eq!(s.both_wrong, q.both_wrong);
        assert_eq!(s.h1c_h2w, q.h1w_h2c);
        assert_eq!(s.h1w_h2c, q.h1c_h2w);
    }

    #[test]
    fn summary_line_format() {
        let log = binary_log("m", &[true, false]);
        let report = compare(&align(log.clone(), log, false).unwrap());
        assert_eq!(report.summary_line(), "BTC=1.0000 BEC=1.0000 ΔAcc=+0.0000");
    }
}
