//! Per-epoch correctness on an evaluation set.
//!
//! File format: JSON Lines, one `{"epoch": k, "correct_ids": [...]}` per epoch
//! with `k` counting from 1. The file does not list the evaluation set itself,
//! so readers supply the id universe; ids never listed were never correct.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use serde::Serialize;

use super::TrainError;
use crate::jsonl::{self, LineError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochEvalLog {
    pub dataset_id: String,
    pub ids: Vec<String>,
    /// `correct[epoch][example]`, aligned with `ids`.
    pub correct: Vec<Vec<bool>>,
}

impl EpochEvalLog {
    pub fn new(dataset_id: impl Into<String>, ids: Vec<String>) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            ids,
            correct: Vec::new(),
        }
    }

    pub fn epochs(&self) -> usize {
        self.correct.len()
    }

    pub fn push_epoch(&mut self, bits: Vec<bool>) {
        debug_assert_eq!(bits.len(), self.ids.len());
        self.correct.push(bits);
    }

    /// Correctness sequence of one example across epochs.
    pub fn sequence(&self, example: usize) -> impl Iterator<Item = bool> + '_ {
        self.correct.iter().map(move |row| row[example])
    }
}

#[derive(Serialize)]
struct EpochLine<'a> {
    epoch: usize,
    correct_ids: Vec<&'a str>,
}

pub fn write_epoch_log<W: Write>(log: &EpochEvalLog, mut w: W) -> std::io::Result<()> {
    for (k, row) in log.correct.iter().enumerate() {
        let line = EpochLine {
            epoch: k + 1,
            correct_ids: log
                .ids
                .iter()
                .zip(row)
                .filter(|(_, c)| **c)
                .map(|(id, _)| id.as_str())
                .collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses an epoch log. `universe` fixes the example ids; without it the ids
/// are those listed anywhere in the file, in first-seen order.
///
/// Epoch numbers must be strictly increasing; they need not be contiguous.
pub fn read_epoch_log(
    text: &str,
    dataset_id: &str,
    universe: Option<&[String]>,
) -> Result<EpochEvalLog, TrainError> {
    let to_err = |e: LineError| TrainError::Parse {
        line: e.line,
        message: e.message,
    };
    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    let mut last_epoch: Option<u64> = None;
    for (line, text) in jsonl::lines(text) {
        let obj = jsonl::object(line, text).map_err(to_err)?;
        let epoch = obj.get("epoch").and_then(|v| v.as_u64()).ok_or_else(|| {
            to_err(LineError::new(
                line,
                "field \"epoch\" must be a non-negative integer",
            ))
        })?;
        if last_epoch.is_some_and(|p| epoch <= p) {
            return Err(to_err(LineError::new(
                line,
                format!(
                    "epoch {epoch} does not follow epoch {}",
                    last_epoch.unwrap_or(0)
                ),
            )));
        }
        last_epoch = Some(epoch);
        let ids = match obj.get("correct_ids") {
            Some(serde_json::Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_str().map(String::from).ok_or_else(|| {
                        to_err(LineError::new(
                            line,
                            "field \"correct_ids\" must hold strings",
                        ))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?,
            _ => {
                return Err(to_err(LineError::new(
                    line,
                    "field \"correct_ids\" must be an array",
                )))
            }
        };
        rows.push((line, ids));
    }

    let ids: Vec<String> = match universe {
        Some(u) => u.to_vec(),
        None => {
            let mut seen = HashSet::new();
            rows.iter()
                .flat_map(|(_, r)| r.iter())
                .filter(|id| seen.insert(id.as_str()))
                .cloned()
                .collect()
        }
    };
    let index: HashMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut log = EpochEvalLog::new(dataset_id, ids.clone());
    for (line, row) in rows {
        let mut bits = vec![false; ids.len()];
        for id in row {
            match index.get(id.as_str()) {
                Some(&i) => bits[i] = true,
                None => {
                    return Err(to_err(LineError::new(
                        line,
                        format!("id '{id}' is not part of the evaluation set"),
                    )))
                }
            }
        }
        log.push_epoch(bits);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EpochEvalLog {
        let mut log = EpochEvalLog::new("val", vec!["a".into(), "b".into(), "c".into()]);
        log.push_epoch(vec![true, false, false]);
        log.push_epoch(vec![false, true, false]);
        log
    }

    #[test]
    fn writes_one_line_per_epoch() {
        let mut buf = Vec::new();
        write_epoch_log(&sample(), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"epoch\":1,\"correct_ids\":[\"a\"]}\n{\"epoch\":2,\"correct_ids\":[\"b\"]}\n"
        );
    }

    #[test]
    fn round_trip_with_universe() {
        let log = sample();
        let mut buf = Vec::new();
        write_epoch_log(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let back = read_epoch_log(&text, "val", Some(&log.ids)).unwrap();
        assert_eq!(back, log);
        let inferred = read_epoch_log(&text, "val", None).unwrap();
        assert_eq!(inferred.ids, vec!["a", "b"]);
    }

    #[test]
    fn rejects_bad_lines() {
        let out_of_order = "{\"epoch\":2,\"correct_ids\":[]}\n{\"epoch\":1,\"correct_ids\":[]}\n";
        assert!(matches!(
            read_epoch_log(out_of_order, "v", None),
            Err(TrainError::Parse { line: 2, .. })
        ));
        let stranger = "{\"epoch\":1,\"correct_ids\":[\"zz\"]}\n";
        let universe = vec!["a".to_string()];
        assert!(matches!(
            read_epoch_log(stranger, "v", Some(&universe)),
            Err(TrainError::Parse { line: 1, .. })
        ));
        assert!(read_epoch_log("{\"epoch\":1}\n", "v", None).is_err());
    }
}
