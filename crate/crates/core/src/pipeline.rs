//! Word-level failure rates of an OCR-style pipeline.
//!
//! Characters are recognised independently with a fixed per-character
//! accuracy, so a word survives only if every character does:
//! `error(word) = 1 − ∏ accuracy(c)`. Characters are case-sensitive.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compat::PredictionLog;
use crate::Label;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("empty word")]
    EmptyWord,
    #[error("word '{word}' contains '{ch}', which has no accuracy entry")]
    UnknownCharacter { word: String, ch: char },
    #[error("charmap has no character for labels {0:?}")]
    CharmapIncomplete(Vec<Label>),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharAccuracyTable {
    pub model_id: String,
    accuracy: BTreeMap<char, f64>,
}

impl CharAccuracyTable {
    pub fn new(
        model_id: impl Into<String>,
        entries: impl IntoIterator<Item = (char, f64)>,
    ) -> Result<Self, PipelineError> {
        let mut accuracy = BTreeMap::new();
        for (c, a) in entries {
            if !(0.0..=1.0).contains(&a) {
                return Err(PipelineError::Invalid(format!(
                    "accuracy of '{c}' is {a}, outside [0, 1]"
                )));
            }
            if accuracy.insert(c, a).is_some() {
                return Err(PipelineError::Invalid(format!(
                    "character '{c}' listed twice"
                )));
            }
        }
        Ok(Self {
            model_id: model_id.into(),
            accuracy,
        })
    }

    pub fn get(&self, c: char) -> Option<f64> {
        self.accuracy.get(&c).copied()
    }

    pub fn len(&self) -> usize {
        self.accuracy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accuracy.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (char, f64)> + '_ {
        self.accuracy.iter().map(|(c, a)| (*c, *a))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["char", "accuracy"])?;
        for (c, a) in self.iter() {
            out.write_record([c.to_string(), a.to_string()])?;
        }
        out.flush()
    }
}

fn csv_err(e: csv::Error) -> PipelineError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    PipelineError::Parse {
        line,
        message: e.to_string(),
    }
}

/// Reads a `char,accuracy` CSV. Each char cell must hold exactly one character.
pub fn read_char_table<R: Read>(r: R, model_id: &str) -> Result<CharAccuracyTable, PipelineError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::None)
        .from_reader(r);
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["char", "accuracy"] {
        return Err(PipelineError::Parse {
            line: 1,
            message: "expected header 'char,accuracy'".into(),
        });
    }
    let mut entries = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let mut chars = rec[0].chars();
        let c = match (chars.next(), chars.next()) {
            (Some(c), None) => c,
            _ => {
                return Err(PipelineError::Parse {
                    line,
                    message: format!("'{}' is not a single character", &rec[0]),
                })
            }
        };
        let a: f64 = rec[1].trim().parse().map_err(|_| PipelineError::Parse {
            line,
            message: format!("'{}' is not a number", &rec[1]),
        })?;
        entries.push((c, a));
    }
    CharAccuracyTable::new(model_id, entries)
}

/// Reads a `label,char` CSV mapping class labels to characters.
pub fn read_charmap<R: Read>(r: R) -> Result<HashMap<Label, char>, PipelineError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::None)
        .from_reader(r);
    let mut map = HashMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| PipelineError::Parse { line, message };
        let label: Label = rec[0]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad label '{}'", &rec[0])))?;
        let mut chars = rec.get(1).unwrap_or("").chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => {
                map.insert(label, c);
            }
            _ => return Err(bad("character cell must hold one character".into())),
        }
    }
    Ok(map)
}

/// Per-character accuracy over records of each true label. Characters with
/// no records are left out.
pub fn char_accuracy_from_log(
    log: &PredictionLog,
    charmap: &HashMap<Label, char>,
) -> Result<CharAccuracyTable, PipelineError> {
    let missing: Vec<Label> = log
        .label_set()
        .iter()
        .filter(|l| !charmap.contains_key(l))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::CharmapIncomplete(missing));
    }
    let mut tally: BTreeMap<char, (usize, usize)> = BTreeMap::new();
    for r in log.records() {
        let t = tally.entry(charmap[&r.true_label]).or_default();
        t.1 += 1;
        if r.is_correct() {
            t.0 += 1;
        }
    }
    CharAccuracyTable::new(
        log.model_id(),
        tally
            .into_iter()
            .map(|(c, (ok, n))| (c, ok as f64 / n as f64)),
    )
}

pub fn word_error(word: &str, table: &CharAccuracyTable) -> Result<f64, PipelineError> {
    if word.is_empty() {
        return Err(PipelineError::EmptyWord);
    }
    let mut survive = 1.0;
    for ch in word.chars() {
        let a = table
            .get(ch)
            .ok_or_else(|| PipelineError::UnknownCharacter {
                word: word.to_string(),
                ch,
            })?;
        survive *= a;
    }
    Ok(1.0 - survive)
}

/// One word per line; blank lines are skipped.
pub fn parse_blacklist(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

pub fn read_blacklist(path: &Path) -> Result<Vec<String>, PipelineError> {
    Ok(parse_blacklist(&std::fs::read_to_string(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlacklistRow {
    pub word: String,
    pub error_h1: f64,
    pub error_h2: f64,
    pub delta: f64,
}

/// Word error under both tables, sorted by descending delta (ties by word).
pub fn blacklist_report(
    words: &[String],
    table_h1: &CharAccuracyTable,
    table_h2: &CharAccuracyTable,
) -> Result<Vec<BlacklistRow>, PipelineError> {
    let mut rows = words
        .par_iter()
        .map(|w| {
            let error_h1 = word_error(w, table_h1)?;
            let error_h2 = word_error(w, table_h2)?;
            Ok(BlacklistRow {
                word: w.clone(),
                error_h1,
                error_h2,
                delta: error_h2 - error_h1,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    rows.sort_by(|a, b| {
        b.delta
            .total_cmp(&a.delta)
            .then_with(|| a.word.cmp(&b.word))
    });
    Ok(rows)
}

pub fn write_blacklist_csv<W: Write>(rows: &[BlacklistRow], w: W) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["word", "error_h1", "error_h2", "delta"])?;
    for r in rows {
        out.write_record([
            r.word.clone(),
            r.error_h1.to_string(),
            r.error_h2.to_string(),
            r.delta.to_string(),
        ])?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compat::PredictionRecord;
    use proptest::prelude::*;

    fn table(entries: &[(char, f64)]) -> CharAccuracyTable {
        CharAccuracyTable::new("m", entries.iter().copied()).unwrap()
    }

    #[test]
    fn word_error_examples() {
        let t = table(&[('a', 0.9), ('b', 0.8), ('c', 0.5), ('d', 1.0)]);
        assert_eq!(word_error("dddd", &t).unwrap(), 0.0);
        assert_eq!(word_error("c", &t).unwrap(), 0.5);
        assert!((word_error("ab", &t).unwrap() - 0.28).abs() < 1e-15);
        assert!(matches!(word_error("", &t), Err(PipelineError::EmptyWord)));
        assert!(matches!(
            word_error("aB", &t),
            Err(PipelineError::UnknownCharacter { ch: 'B', .. })
        ));
    }

    #[test]
    fn invalid_tables() {
        assert!(CharAccuracyTable::new("m", [('a', 1.2)]).is_err());
        assert!(CharAccuracyTable::new("m", [('a', 0.2), ('a', 0.3)]).is_err());
    }

    #[test]
    fn report_single_word() {
        let rows =
            blacklist_report(&["x".into()], &table(&[('x', 0.8)]), &table(&[('x', 0.6)])).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].error_h1 - 0.2).abs() < 1e-15);
        assert!((rows[0].error_h2 - 0.4).abs() < 1e-15);
        assert!((rows[0].delta - 0.2).abs() < 1e-15);
    }

    #[test]
    fn report_orders_by_delta_and_flags_degraded_characters() {
        let h1 = table(&[
            ('N', 0.99),
            ('i', 0.98),
            ('k', 0.97),
            ('e', 0.99),
            ('l', 0.95),
            ('0', 0.89),
            ('Z', 0.96),
            ('a', 0.99),
            ('r', 0.98),
        ]);
        let mut h2_entries: Vec<(char, f64)> = h1.iter().collect();
        for e in h2_entries.iter_mut() {
            match e.0 {
                '0' => e.1 = 0.10,
                'l' => e.1 = 0.60,
                'Z' => e.1 = 0.50,
                _ => {}
            }
        }
        let h2 = CharAccuracyTable::new("h2", h2_entries).unwrap();
        let words: Vec<String> = ["Nike", "Nlke", "Zara", "N0ke", "kale"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows = blacklist_report(&words, &h1, &h2).unwrap();
        for r in &rows {
            let degraded = r.word.contains(['0', 'l', 'Z']);
            assert_eq!(r.delta > 0.0, degraded, "{}", r.word);
            assert_eq!(r.delta, r.error_h2 - r.error_h1);
        }
        assert!(rows.windows(2).all(|w| w[0].delta >= w[1].delta));
        assert_eq!(rows[0].word, "N0ke");
        let same = blacklist_report(&words, &h1, &h1).unwrap();
        assert!(same.iter().all(|r| r.delta == 0.0));
    }

    fn char_log(model: &str, zero_correct: usize) -> PredictionLog {
        let mut recs = Vec::new();
        for i in 0..100 {
            let pred = if i < zero_correct { 0 } else { 1 };
            recs.push(PredictionRecord::new(format!("z{i}"), 0, pred));
            recs.push(PredictionRecord::new(format!("o{i}"), 1, 1));
        }
        PredictionLog::new(model, vec![0, 1], recs).unwrap()
    }

    #[test]
    fn char_accuracy_from_constructed_logs() {
        let charmap: HashMap<Label, char> = [(0, '0'), (1, 'O')].into();
        let t1 = char_accuracy_from_log(&char_log("h1", 89), &charmap).unwrap();
        let t2 = char_accuracy_from_log(&char_log("h2", 10), &charmap).unwrap();
        assert_eq!(t1.get('0'), Some(0.89));
        assert_eq!(t2.get('0'), Some(0.10));
        assert_eq!(t1.get('O'), Some(1.0));
        assert_eq!(t1.model_id, "h1");

        let partial: HashMap<Label, char> = [(0, '0')].into();
        assert!(matches!(
            char_accuracy_from_log(&char_log("h1", 5), &partial),
            Err(PipelineError::CharmapIncomplete(l)) if l == vec![1]
        ));
    }

    #[test]
    fn nine_of_ten_is_point_nine() {
        let recs = (0..10)
            .map(|i| PredictionRecord::new(format!("{i}"), 0, if i == 0 { 1 } else { 0 }))
            .collect();
        let log = PredictionLog::new("m", vec![0, 1], recs).unwrap();
        let t = char_accuracy_from_log(&log, &[(0, '0'), (1, '1')].into()).unwrap();
        assert_eq!(t.get('0'), Some(0.9));
        assert_eq!(t.get('1'), None);
    }

    #[test]
    fn csv_round_trip() {
        let t = table(&[('a', 0.25), (',', 0.5), ('Z', 1.0)]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = read_char_table(buf.as_slice(), "m").unwrap();
        assert_eq!(back, t);
        assert!(read_char_table("char,accuracy\nab,0.5\n".as_bytes(), "m").is_err());
        assert!(matches!(
            read_char_table("char,accuracy\na,0.5\nb,x\n".as_bytes(), "m"),
            Err(PipelineError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn blacklist_lines() {
        assert_eq!(parse_blacklist("Nike\r\n\nZara\n"), vec!["Nike", "Zara"]);
    }

    proptest! {
        #[test]
        fn permutation_invariant_and_monotone(
            accs in proptest::collection::vec(0.0f64..=1.0, 1..8),
            pick in 0usize..8,
            drop in 0.0f64..=1.0,
        ) {
            let alphabet: Vec<char> = "abcdefgh".chars().collect();
            let t = CharAccuracyTable::new("m", alphabet.iter().copied().zip(accs.iter().copied())).unwrap();
            let word: String = alphabet[..accs.len()].iter().collect();
            let rev: String = word.chars().rev().collect();
            let e = word_error(&word, &t).unwrap();
            prop_assert!((e - word_error(&rev, &t).unwrap()).abs() < 1e-12);
            let k = pick % accs.len();
            let mut lowered = accs.clone();
            lowered[k] *= drop;
            let t2 = CharAccuracyTable::new("m", alphabet.iter().copied().zip(lowered)).unwrap();
            prop_assert!(word_error(&word, &t2).unwrap() >= e);
        }
    }
}
