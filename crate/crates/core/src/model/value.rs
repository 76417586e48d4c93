use std::cmp::Ordering;
use std::fmt;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

/// The type tag of a [`Value`], as declared by a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueType {
    Integer,
    Float,
    Text,
    Datetime,
    Enum,
    UnstructuredText,
    UnstructuredBlob,
}

impl ValueType {
    pub fn is_unstructured(self) -> bool {
        matches!(self, ValueType::UnstructuredText | ValueType::UnstructuredBlob)
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, ValueType::Integer | ValueType::Float | ValueType::Datetime)
    }

    pub fn name(self) -> &'static str {
        match self {
            ValueType::Integer => "integer",
            ValueType::Float => "float",
            ValueType::Text => "text",
            ValueType::Datetime => "datetime",
            ValueType::Enum => "enum",
            ValueType::UnstructuredText => "unstructured_text",
            ValueType::UnstructuredBlob => "unstructured_blob",
        }
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A single cell.
///
/// Datetimes are stored as epoch seconds (UTC). Unstructured variants are
/// opaque to the comparison operators; see [`Value::compare`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Value {
    Null,
    Integer(i64),
    Float(f64),
    Text(String),
    Datetime(i64),
    Enum(String),
    UnstructuredText(String),
    UnstructuredBlob { bytes: Vec<u8>, media_type: String },
}

/// Comparing an unstructured value, or two values of incompatible types.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("cannot compare {left} with {right}")]
pub struct CompareError {
    pub left: &'static str,
    pub right: &'static str,
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Integer(_) => "integer",
            Value::Float(_) => "float",
            Value::Text(_) => "text",
            Value::Datetime(_) => "datetime",
            Value::Enum(_) => "enum",
            Value::UnstructuredText(_) => "unstructured_text",
            Value::UnstructuredBlob { .. } => "unstructured_blob",
        }
    }

    pub fn value_type(&self) -> Option<ValueType> {
        Some(match self {
            Value::Null => return None,
            Value::Integer(_) => ValueType::Integer,
            Value::Float(_) => ValueType::Float,
            Value::Text(_) => ValueType::Text,
            Value::Datetime(_) => ValueType::Datetime,
            Value::Enum(_) => ValueType::Enum,
            Value::UnstructuredText(_) => ValueType::UnstructuredText,
            Value::UnstructuredBlob { .. } => ValueType::UnstructuredBlob,
        })
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn is_unstructured(&self) -> bool {
        matches!(self, Value::UnstructuredText(_) | Value::UnstructuredBlob { .. })
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(v) | Value::Datetime(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            _ => None,
        }
    }

    /// String content for text-like values, including unstructured text.
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) | Value::Enum(s) | Value::UnstructuredText(s) => Some(s),
            _ => None,
        }
    }

    /// Total order used by the comparison operators and ORDER BY.
    ///
    /// Numbers (integers, floats, datetimes) compare numerically with each
    /// other, text and enum labels compare lexicographically. Unstructured
    /// values never compare.
    pub fn compare(&self, other: &Value) -> Result<Ordering, CompareError> {
        let err = || CompareError {
            left: self.type_name(),
            right: other.type_name(),
        };
        if self.is_unstructured() || other.is_unstructured() {
            return Err(err());
        }
        match (self, other) {
            (Value::Null, Value::Null) => Ok(Ordering::Equal),
            (Value::Null, _) => Ok(Ordering::Less),
            (_, Value::Null) => Ok(Ordering::Greater),
            (Value::Integer(a), Value::Integer(b)) | (Value::Datetime(a), Value::Datetime(b)) => {
                Ok(a.cmp(b))
            }
            (a, b) if a.as_f64().is_some() && b.as_f64().is_some() => {
                Ok(a.as_f64().unwrap().total_cmp(&b.as_f64().unwrap()))
            }
            (Value::Text(a) | Value::Enum(a), Value::Text(b) | Value::Enum(b)) => Ok(a.cmp(b)),
            _ => Err(err()),
        }
    }

    /// Plain rendering used by the text and CSV output formats.
    pub fn render(&self) -> String {
        match self {
            Value::Null => "NULL".to_string(),
            Value::Integer(v) => v.to_string(),
            Value::Float(v) => {
                if v.fract() == 0.0 && v.abs() < 1e15 {
                    format!("{v:.1}")
                } else {
                    v.to_string()
                }
            }
            Value::Text(s) | Value::Enum(s) | Value::UnstructuredText(s) => s.clone(),
            Value::Datetime(secs) => DateTime::from_timestamp(*secs, 0)
                .map(|d| d.naive_utc().format("%Y-%m-%dT%H:%M:%S").to_string())
                .unwrap_or_else(|| secs.to_string()),
            Value::UnstructuredBlob { bytes, media_type } => {
                format!("<{media_type}; {} bytes>", bytes.len())
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Parse an ISO-8601 datetime (seconds resolution) into epoch seconds.
///
/// Accepts RFC 3339 with offset, naive `YYYY-MM-DDTHH:MM:SS` (taken as UTC),
/// the same with a space separator, and bare dates.
pub fn parse_datetime(text: &str) -> Option<i64> {
    let text = text.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(text, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}
