//! Line-oriented JSON helpers shared by the file formats.

use serde_json::{Map, Value};

/// A diagnostic tied to a 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl LineError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

/// Non-blank lines with their 1-based line numbers.
pub fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn object(line: usize, text: &str) -> Result<Map<String, Value>, LineError> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(LineError::new(line, "expected a JSON object")),
        Err(e) => Err(LineError::new(line, format!("malformed JSON: {e}"))),
    }
}

pub struct Fields<'a> {
    pub line: usize,
    pub map: &'a Map<String, Value>,
}

impl<'a> Fields<'a> {
    pub fn new(line: usize, map: &'a Map<String, Value>) -> Self {
        Self { line, map }
    }

    fn err(&self, msg: String) -> LineError {
        LineError::new(self.line, msg)
    }

    fn required(&self, key: &str) -> Result<&'a Value, LineError> {
        self.map
            .get(key)
            .ok_or_else(|| self.err(format!("missing field \"{key}\"")))
    }

    pub fn string(&self, key: &str) -> Result<String, LineError> {
        match self.required(key)? {
            Value::String(s) => Ok(s.clone()),
            other => Err(self.err(format!("field \"{key}\" must be a string, got {other}"))),
        }
    }

    /// A class label. Arrays and fractional numbers are rejected with a
    /// message naming the unsupported task type.
    pub fn label(&self, key: &str) -> Result<i64, LineError> {
        let v = self.required(key)?;
        as_label(v).map_err(|m| self.err(format!("field \"{key}\": {m}")))
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>, LineError> {
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Number(n)) => Ok(n.as_f64()),
            Some(other) => Err(self.err(format!(
                "field \"{key}\" must be a number or null, got {other}"
            ))),
        }
    }

    pub fn opt_strings(&self, key: &str) -> Result<Option<Vec<String>>, LineError> {
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s.clone()),
                    other => {
                        Err(self.err(format!("field \"{key}\" must hold strings, got {other}")))
                    }
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(other) => Err(self.err(format!(
                "field \"{key}\" must be an array of strings or null, got {other}"
            ))),
        }
    }

    pub fn labels(&self, key: &str) -> Result<Vec<i64>, LineError> {
        match self.required(key)? {
            Value::Array(items) => items
                .iter()
                .map(|v| as_label(v).map_err(|m| self.err(format!("field \"{key}\": {m}"))))
                .collect(),
            other => Err(self.err(format!("field \"{key}\" must be an array, got {other}"))),
        }
    }

    pub fn floats(&self, key: &str) -> Result<Vec<f64>, LineError> {
        match self.required(key)? {
            Value::Array(items) => items
                .iter()
                .map(|v| {
                    v.as_f64().ok_or_else(|| {
                        self.err(format!("field \"{key}\" must hold numbers, got {v}"))
                    })
                })
                .collect(),
            other => Err(self.err(format!("field \"{key}\" must be an array, got {other}"))),
        }
    }

    pub fn opt_usizes(&self, key: &str) -> Result<Option<Vec<usize>>, LineError> {
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_u64().map(|u| u as usize).ok_or_else(|| {
                        self.err(format!(
                            "field \"{key}\" must hold non-negative integers, got {v}"
                        ))
                    })
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(other) => Err(self.err(format!(
                "field \"{key}\" must be an array or null, got {other}"
            ))),
        }
    }
}

fn as_label(v: &Value) -> Result<i64, String> {
    match v {
        Value::Number(n) => match n.as_i64() {
            Some(l) => Ok(l),
            None => Err(format!(
                "non-integer target {n}; regression targets are not supported"
            )),
        },
        Value::Array(_) => Err("multi-label targets are not supported".into()),
        other => Err(format!("expected an integer label, got {other}")),
    }
}
