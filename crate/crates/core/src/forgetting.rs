//! Example forgetting and its relation to incompatible points.
//!
//! A forgetting event is a correct→incorrect transition between consecutive
//! evaluated epochs. An example wrong at the first epoch has no prior correct
//! state, so nothing is counted there.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compat::{Quadrant, UpdateComparison};
use crate::trainer::EpochEvalLog;

#[derive(Debug, Error)]
pub enum ForgettingError {
    #[error("epoch log has no epochs")]
    EmptyLog,
    #[error("forgetting counts for {model} miss {missing} aligned ids (e.g. '{example}')")]
    IdCoverageMismatch {
        model: &'static str,
        missing: usize,
        example: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForgettingCounts {
    counts: HashMap<String, usize>,
    pub epochs_observed: usize,
}

impl ForgettingCounts {
    pub fn get(&self, id: &str) -> Option<usize> {
        self.counts.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> + '_ {
        self.counts.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Counts correct→incorrect transitions per example, in one pass over epochs.
pub fn count_forgetting_events(log: &EpochEvalLog) -> Result<ForgettingCounts, ForgettingError> {
    let mut rows = log.correct.iter();
    let first = rows.next().ok_or(ForgettingError::EmptyLog)?;
    let mut prev = first.clone();
    let mut counts = vec![0usize; log.ids.len()];
    for row in rows {
        for ((count, was), now) in counts.iter_mut().zip(prev.iter_mut()).zip(row) {
            if *was && !*now {
                *count += 1;
            }
            *was = *now;
        }
    }
    Ok(ForgettingCounts {
        counts: log.ids.iter().cloned().zip(counts).collect(),
        epochs_observed: log.epochs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingRow {
    pub quadrant: Quadrant,
    /// `"h1"` or `"h2"`: whose forgetting counts are aggregated.
    pub model: String,
    /// `None` when the quadrant is empty.
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
    pub n: usize,
}

/// Mean ± std of forgetting events per quadrant, for each model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingTable {
    pub rows: Vec<ForgettingRow>,
}

impl ForgettingTable {
    pub fn get(&self, quadrant: Quadrant, model: &str) -> Option<&ForgettingRow> {
        self.rows
            .iter()
            .find(|r| r.quadrant == quadrant && r.model == model)
    }

    pub fn mean(&self, quadrant: Quadrant, model: &str) -> Option<f64> {
        self.get(quadrant, model).and_then(|r| r.mean)
    }

    /// Whether `both_correct < both_wrong < h1c_h2w` holds for `model`.
    pub fn ordered(&self, model: &str) -> bool {
        match (
            self.mean(Quadrant::BothCorrect, model),
            self.mean(Quadrant::BothWrong, model),
            self.mean(Quadrant::H1CorrectH2Wrong, model),
        ) {
            (Some(a), Some(b), Some(c)) => a < b && b < c,
            _ => false,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["quadrant", "model", "mean", "std", "n"])?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.write_record([
                r.quadrant.name().to_string(),
                r.model.clone(),
                fmt(r.mean),
                fmt(r.std),
                r.n.to_string(),
            ])?;
        }
        out.flush()
    }
}

pub(crate) fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

fn coverage(
    cmp: &UpdateComparison,
    counts: &ForgettingCounts,
    model: &'static str,
) -> Result<(), ForgettingError> {
    let missing: Vec<&str> = cmp
        .aligned_ids()
        .filter(|id| counts.get(id).is_none())
        .collect();
    match missing.first() {
        None => Ok(()),
        Some(first) => Err(ForgettingError::IdCoverageMismatch {
            model,
            missing: missing.len(),
            example: first.to_string(),
        }),
    }
}

/// Aggregates each model's forgetting counts over the comparison's quadrants.
///
/// Rows come in quadrant order (`both_correct`, `both_wrong`, `h1c_h2w`,
/// `h1w_h2c`), `h1` before `h2` within a quadrant.
pub fn forgetting_by_quadrant(
    cmp: &UpdateComparison,
    counts_h1: &ForgettingCounts,
    counts_h2: &ForgettingCounts,
) -> Result<ForgettingTable, ForgettingError> {
    coverage(cmp, counts_h1, "h1")?;
    coverage(cmp, counts_h2, "h2")?;
    let mut buckets: HashMap<(Quadrant, usize), Vec<f64>> = HashMap::new();
    for (a, b) in cmp.pairs() {
        let q = Quadrant::of(a.is_correct(), b.is_correct());
        let id = a.example_id.as_str();
        for (m, counts) in [counts_h1, counts_h2].into_iter().enumerate() {
            let c = counts.get(id).expect("coverage checked");
            buckets.entry((q, m)).or_default().push(c as f64);
        }
    }
    let mut rows = Vec::with_capacity(8);
    for q in Quadrant::ALL {
        for (m, name) in ["h1", "h2"].into_iter().enumerate() {
            let values = buckets.remove(&(q, m)).unwrap_or_default();
            let (mean, std) = mean_std(&values);
            rows.push(ForgettingRow {
                quadrant: q,
                model: name.to_string(),
                mean,
                std,
                n: values.len(),
            });
        }
    }
    Ok(ForgettingTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compat::{align, PredictionLog, PredictionRecord};
    use proptest::prelude::*;

    fn log_from(seqs: &[&[u8]]) -> EpochEvalLog {
        let ids: Vec<String> = (0..seqs.len()).map(|i| format!("e{i}")).collect();
        let epochs = seqs.first().map_or(0, |s| s.len());
        let mut log = EpochEvalLog::new("val", ids);
        for e in 0..epochs {
            log.push_epoch(seqs.iter().map(|s| s[e] == 1).collect());
        }
        log
    }

    #[test]
    fn counts_transitions() {
        let log = log_from(&[
            &[1, 1, 1, 1],
            &[1, 0, 1, 0],
            &[0, 0, 1, 0, 0, 1][..4],
            &[0, 0, 0, 0],
        ]);
        let c = count_forgetting_events(&log).unwrap();
        assert_eq!(c.get("e0"), Some(0));
        assert_eq!(c.get("e1"), Some(2));
        assert_eq!(c.get("e3"), Some(0));
        let six = log_from(&[&[0, 0, 1, 0, 0, 1]]);
        assert_eq!(count_forgetting_events(&six).unwrap().get("e0"), Some(1));
        assert_eq!(count_forgetting_events(&six).unwrap().epochs_observed, 6);
    }

    #[test]
    fn empty_log_is_an_error() {
        let log = EpochEvalLog::new("v", vec!["a".into()]);
        assert!(matches!(
            count_forgetting_events(&log),
            Err(ForgettingError::EmptyLog)
        ));
    }

    /// Nine points: ids 0-2 both correct, 3-5 both wrong, 6-8 incompatible.
    fn nine_point() -> UpdateComparison {
        let mk = |model: &str, h2: bool| {
            let recs = (0..9)
                .map(|i| {
                    let correct = match i / 3 {
                        0 => true,
                        1 => false,
                        _ => !h2,
                    };
                    PredictionRecord::new(format!("e{i}"), 0, if correct { 0 } else { 1 })
                })
                .collect();
            PredictionLog::new(model, vec![0, 1], recs).unwrap()
        };
        align(mk("h1", false), mk("h2", true), false).unwrap()
    }

    fn constant_counts(values: &[usize]) -> ForgettingCounts {
        ForgettingCounts {
            counts: values
                .iter()
                .enumerate()
                .map(|(i, v)| (format!("e{i}"), *v))
                .collect(),
            epochs_observed: 10,
        }
    }

    #[test]
    fn quadrant_aggregation() {
        let cmp = nine_point();
        let zeros = constant_counts(&[0; 9]);
        let t = forgetting_by_quadrant(&cmp, &zeros, &zeros).unwrap();
        assert!(t
            .rows
            .iter()
            .filter(|r| r.n > 0)
            .all(|r| r.mean == Some(0.0)));

        let ones = constant_counts(&[1; 9]);
        let t = forgetting_by_quadrant(&cmp, &ones, &ones).unwrap();
        for r in t.rows.iter().filter(|r| r.n > 0) {
            assert_eq!(r.mean, Some(1.0));
            assert_eq!(r.std, Some(0.0));
        }

        let graded = constant_counts(&[0, 0, 0, 1, 1, 1, 2, 2, 2]);
        let t = forgetting_by_quadrant(&cmp, &graded, &graded).unwrap();
        for m in ["h1", "h2"] {
            assert_eq!(t.mean(Quadrant::BothCorrect, m), Some(0.0));
            assert_eq!(t.mean(Quadrant::BothWrong, m), Some(1.0));
            assert_eq!(t.mean(Quadrant::H1CorrectH2Wrong, m), Some(2.0));
            assert_eq!(t.get(Quadrant::H1WrongH2Correct, m).unwrap().n, 0);
            assert!(t.ordered(m));
        }
        assert_eq!(t.rows.len(), 8);
    }

    #[test]
    fn coverage_mismatch() {
        let cmp = nine_point();
        let short = constant_counts(&[0; 5]);
        let full = constant_counts(&[0; 9]);
        assert!(matches!(
            forgetting_by_quadrant(&cmp, &full, &short),
            Err(ForgettingError::IdCoverageMismatch {
                model: "h2",
                missing: 4,
                ..
            })
        ));
    }

    #[test]
    fn csv_layout() {
        let cmp = nine_point();
        let graded = constant_counts(&[0, 0, 0, 1, 1, 1, 2, 2, 2]);
        let t = forgetting_by_quadrant(&cmp, &graded, &graded).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "quadrant,model,mean,std,n");
        assert_eq!(lines[1], "both_correct,h1,0,0,3");
        assert_eq!(lines[5], "h1c_h2w,h1,2,0,3");
        assert_eq!(lines[7], "h1w_h2c,h1,,,0");
    }

    proptest! {
        #[test]
        fn weighted_means_recover_the_total(
            bits in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 6), 1..30),
            h1 in proptest::collection::vec(any::<bool>(), 30),
            h2 in proptest::collection::vec(any::<bool>(), 30),
        ) {
            let n = bits.len();
            let ids: Vec<String> = (0..n).map(|i| format!("e{i}")).collect();
            let mut log = EpochEvalLog::new("v", ids.clone());
            for e in 0..6 {
                log.push_epoch(bits.iter().map(|s| s[e]).collect());
            }
            let counts = count_forgetting_events(&log).unwrap();
            for (_, c) in counts.iter() {
                prop_assert!(c <= counts.epochs_observed / 2 + 1);
            }
            let mk = |m: &str, c: &[bool]| {
                let recs = ids.iter().zip(c).map(|(id, ok)| PredictionRecord::new(id.clone(), 0, if *ok { 0 } else { 1 })).collect();
                PredictionLog::new(m, vec![0, 1], recs).unwrap()
            };
            let cmp = align(mk("a", &h1[..n]), mk("b", &h2[..n]), false).unwrap();
            let t = forgetting_by_quadrant(&cmp, &counts, &counts).unwrap();
            let weighted: f64 = t.rows.iter().filter(|r| r.model == "h1").map(|r| r.mean.unwrap_or(0.0) * r.n as f64).sum();
            prop_assert!((weighted - counts.total() as f64).abs() < 1e-9);
        }
    }
}
