//! Prediction-log files.
//!
//! JSON Lines: a header `{"model_id": ..., "label_set": [...]}` followed by one
//! `{"id", "y", "pred", "conf", "groups"}` object per record.
//!
//! CSV: columns `id,y,pred,conf,groups` with `groups` semicolon-delimited and
//! empty cells meaning null. CSV carries no header object, so the model id is
//! supplied by the caller (the CLI uses the file stem) and the label set is
//! the sorted union of every `y` and `pred` value.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::{check_record, validate_label_set, CompatError, PredictionLog, PredictionRecord};
use crate::jsonl::{self, Fields, LineError};
use crate::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    JsonLines,
    Csv,
}

impl LogFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => LogFormat::Csv,
            _ => LogFormat::JsonLines,
        }
    }
}

impl From<LineError> for CompatError {
    fn from(e: LineError) -> Self {
        CompatError::Parse {
            line: e.line,
            message: e.message,
        }
    }
}

/// Reads a log, choosing the format from the file extension.
pub fn read_log(path: &Path) -> Result<PredictionLog, CompatError> {
    let text = std::fs::read_to_string(path)?;
    match LogFormat::from_path(path) {
        LogFormat::JsonLines => read_log_jsonl(&text),
        LogFormat::Csv => {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
            read_log_csv(&text, stem)
        }
    }
}

pub fn read_log_jsonl(text: &str) -> Result<PredictionLog, CompatError> {
    let mut lines = jsonl::lines(text);
    let (hline, htext) = lines.next().ok_or_else(|| CompatError::Parse {
        line: 1,
        message: "empty file; expected a header line".into(),
    })?;
    let header = jsonl::object(hline, htext)?;
    let hf = Fields::new(hline, &header);
    let model_id = hf.string("model_id")?;
    let label_set = hf.labels("label_set")?;
    validate_label_set(&label_set).map_err(|m| LineError::new(hline, m))?;

    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (line, text) in lines {
        let obj = jsonl::object(line, text)?;
        let f = Fields::new(line, &obj);
        let record = PredictionRecord {
            example_id: f.string("id")?,
            true_label: f.label("y")?,
            predicted_label: f.label("pred")?,
            confidence: f.opt_f64("conf")?,
            groups: f.opt_strings("groups")?,
        };
        admit(&mut seen, &record, &label_set, line)?;
        records.push(record);
    }
    PredictionLog::new(model_id, label_set, records)
}

fn admit(
    seen: &mut HashMap<String, usize>,
    record: &PredictionRecord,
    label_set: &[Label],
    line: usize,
) -> Result<(), LineError> {
    check_record(record, label_set).map_err(|m| LineError::new(line, m))?;
    if let Some(first) = seen.insert(record.example_id.clone(), line) {
        return Err(LineError::new(
            line,
            format!(
                "duplicate example id '{}' (first seen on line {first})",
                record.example_id
            ),
        ));
    }
    Ok(())
}

pub fn read_log_csv(text: &str, model_id: &str) -> Result<PredictionLog, CompatError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| LineError::new(1, format!("bad CSV header: {e}")))?
        .clone();
    let col = |name: &str| -> Result<usize, LineError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| LineError::new(1, format!("missing column \"{name}\"")))
    };
    let (c_id, c_y, c_pred) = (col("id")?, col("y")?, col("pred")?);
    let c_conf = headers.iter().position(|h| h == "conf");
    let c_groups = headers.iter().position(|h| h == "groups");

    let mut rows = Vec::new();
    for result in reader.records() {
        let rec = result.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            LineError::new(line, format!("bad CSV row: {e}"))
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let cell = |i: usize| rec.get(i).unwrap_or("");
        let label = |i: usize, name: &str| -> Result<Label, LineError> {
            let s = cell(i);
            s.parse::<Label>().map_err(|_| {
                if s.parse::<f64>().is_ok() {
                    LineError::new(line, format!("column \"{name}\": non-integer target {s}; regression targets are not supported"))
                } else if s.contains(';') || s.contains('|') {
                    LineError::new(line, format!("column \"{name}\": multi-label targets are not supported"))
                } else {
                    LineError::new(line, format!("column \"{name}\": expected an integer label, got \"{s}\""))
                }
            })
        };
        let confidence = match c_conf.map(cell).filter(|s| !s.is_empty() && *s != "null") {
            None => None,
            Some(s) => Some(s.parse::<f64>().map_err(|_| {
                LineError::new(
                    line,
                    format!("column \"conf\": expected a number, got \"{s}\""),
                )
            })?),
        };
        let groups = c_groups
            .map(cell)
            .filter(|s| !s.is_empty() && *s != "null")
            .map(|s| {
                s.split(';')
                    .map(|t| t.trim().to_string())
                    .filter(|t| !t.is_empty())
                    .collect()
            });
        rows.push((
            line,
            PredictionRecord {
                example_id: cell(c_id).to_string(),
                true_label: label(c_y, "y")?,
                predicted_label: label(c_pred, "pred")?,
                confidence,
                groups,
            },
        ));
    }

    let label_set: Vec<Label> = rows
        .iter()
        .flat_map(|(_, r)| [r.true_label, r.predicted_label])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if label_set.is_empty() {
        return Err(CompatError::Parse {
            line: 1,
            message: "CSV log has no records".into(),
        });
    }
    let mut seen = HashMap::new();
    for (line, r) in &rows {
        if r.example_id.is_empty() {
            return Err(LineError::new(*line, "empty example id").into());
        }
        admit(&mut seen, r, &label_set, *line)?;
    }
    PredictionLog::new(
        model_id,
        label_set,
        rows.into_iter().map(|(_, r)| r).collect(),
    )
}

#[derive(Serialize)]
struct HeaderOut<'a> {
    model_id: &'a str,
    label_set: &'a [Label],
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    y: Label,
    pred: Label,
    conf: Option<f64>,
    groups: Option<&'a [String]>,
}

pub fn write_log_jsonl<W: Write>(log: &PredictionLog, mut w: W) -> std::io::Result<()> {
    let header = HeaderOut {
        model_id: log.model_id(),
        label_set: log.label_set(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for r in log.records() {
        let out = RecordOut {
            id: &r.example_id,
            y: r.true_label,
            pred: r.predicted_label,
            conf: r.confidence,
            groups: r.groups.as_deref(),
        };
        serde_json::to_writer(&mut w, &out)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_log_csv<W: Write>(log: &PredictionLog, w: W) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["id", "y", "pred", "conf", "groups"])?;
    for r in log.records() {
        out.write_record([
            r.example_id.clone(),
            r.true_label.to_string(),
            r.predicted_label.to_string(),
            r.confidence.map(|c| c.to_string()).unwrap_or_default(),
            r.groups.as_ref().map(|g| g.join(";")).unwrap_or_default(),
        ])?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const GOOD: &str = r#"{"model_id": "m1", "label_set": [0, 1, 2]}
{"id": "a", "y": 0, "pred": 0, "conf": 0.9, "groups": ["genre:comedy"]}
{"id": "b", "y": 1, "pred": 2, "conf": null, "groups": null}
{"id": "c", "y": 2, "pred": 2}
"#;

    #[test]
    fn parses_jsonl() {
        let log = read_log_jsonl(GOOD).unwrap();
        assert_eq!(log.model_id(), "m1");
        assert_eq!(log.label_set(), &[0, 1, 2]);
        assert_eq!(log.len(), 3);
        assert_eq!(log.records()[0].confidence, Some(0.9));
        assert_eq!(
            log.records()[0].groups.as_deref(),
            Some(&["genre:comedy".to_string()][..])
        );
        assert_eq!(log.records()[1].confidence, None);
    }

    fn line_of(text: &str) -> usize {
        match read_log_jsonl(text) {
            Err(CompatError::Parse { line, .. }) => line,
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_is_reported_by_number() {
        let mut lines: Vec<String> = GOOD.lines().map(String::from).collect();
        lines.push(r#"{"id": "d", "y": 0, "pred": 0}"#.into());
        lines.push(r#"{"id": "e", "y": 0, "pred": 0}"#.into());
        lines.push(r#"{"id": "f", "y": 0, "pred": 0,,}"#.into());
        let text = lines.join("\n");
        assert_eq!(line_of(&text), 7);
    }

    #[test]
    fn validation_errors_carry_lines() {
        let dup = format!("{GOOD}{}\n", r#"{"id": "a", "y": 0, "pred": 0}"#);
        assert_eq!(line_of(&dup), 5);
        let bad_label = GOOD.replace(r#""pred": 2}"#, r#""pred": 7}"#);
        assert_eq!(line_of(&bad_label), 4);
        let bad_conf = GOOD.replace("0.9", "1.2");
        assert_eq!(line_of(&bad_conf), 2);
        let multi = GOOD.replace(r#""y": 2,"#, r#""y": [1, 2],"#);
        assert_eq!(line_of(&multi), 4);
        let regression = GOOD.replace(r#""y": 2,"#, r#""y": 2.5,"#);
        assert_eq!(line_of(&regression), 4);
        assert_eq!(line_of(""), 1);
        assert_eq!(line_of(r#"{"model_id": "m", "label_set": []}"#), 1);
    }

    #[test]
    fn csv_matches_jsonl() {
        let csv_text = "id,y,pred,conf,groups\na,0,0,0.9,genre:comedy\nb,1,2,,\nc,2,2,,\n";
        let from_csv = read_log_csv(csv_text, "m1").unwrap();
        let from_json = read_log_jsonl(GOOD).unwrap();
        assert_eq!(from_csv, from_json);
    }

    #[test]
    fn csv_errors() {
        let err = read_log_csv("id,y,pred\na,0,0\nb,0.5,0\n", "m").unwrap_err();
        assert!(
            matches!(err, CompatError::Parse { line: 3, ref message } if message.contains("regression"))
        );
        let dup = read_log_csv("id,y,pred\na,0,0\na,1,1\n", "m").unwrap_err();
        assert!(matches!(dup, CompatError::Parse { line: 3, .. }));
        assert!(read_log_csv("id,y\na,0\n", "m").is_err());
    }

    fn arb_log() -> impl Strategy<Value = PredictionLog> {
        let rec = (
            0i64..4,
            0i64..4,
            proptest::option::of(0.0f64..=1.0),
            any::<bool>(),
        );
        proptest::collection::vec(rec, 1..40).prop_map(|rows| {
            let records = rows
                .into_iter()
                .enumerate()
                .map(|(i, (y, p, c, tagged))| PredictionRecord {
                    example_id: format!("ex,{i}"),
                    true_label: y,
                    predicted_label: p,
                    confidence: c,
                    groups: tagged.then(|| vec!["g:a".to_string(), "g:b".to_string()]),
                })
                .collect();
            PredictionLog::new("model", vec![0, 1, 2, 3], records).unwrap()
        })
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(log in arb_log()) {
            let mut buf = Vec::new();
            write_log_jsonl(&log, &mut buf).unwrap();
            let back = read_log_jsonl(std::str::from_utf8(&buf).unwrap()).unwrap();
            prop_assert_eq!(back, log);
        }
    }
}
