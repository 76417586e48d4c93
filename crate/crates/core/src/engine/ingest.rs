use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value as Json;

use crate::model::{parse_datetime, validate_table, ColumnSpec, Schema, Table, Value, ValueType};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown field `{field}`")]
    UnknownField { line: usize, field: String },
    #[error("line {line}: missing column `{column}`")]
    MissingColumn { line: usize, column: String },
    #[error("line {line}, column `{column}`: expected {expected}, found `{found}`")]
    BadCell {
        line: usize,
        column: String,
        expected: ValueType,
        found: String,
    },
    #[error("schema: {0}")]
    Schema(String),
    #[error("cannot tell the format of `{0}`; use a .jsonl or .csv file")]
    UnknownFormat(PathBuf),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> IngestError {
    IngestError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// A schema sidecar: either `{"columns": [...]}` or a bare array of column
/// specs.
pub fn read_schema(path: &Path) -> Result<Schema, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_schema(&text)
}

pub fn parse_schema(text: &str) -> Result<Schema, IngestError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Sidecar {
        Wrapped {
            columns: Vec<ColumnSpec>,
        },
        Bare(Vec<ColumnSpec>),
    }
    let columns = match serde_json::from_str::<Sidecar>(text)
        .map_err(|e| IngestError::Schema(e.to_string()))?
    {
        Sidecar::Wrapped { columns } | Sidecar::Bare(columns) => columns,
    };
    Schema::new(columns).map_err(|e| IngestError::Schema(e.to_string()))
}

/// Read a data file against a schema sidecar, picking JSONL or CSV by
/// extension.
pub fn ingest(data: &Path, schema: &Path) -> Result<Table, IngestError> {
    let schema = read_schema(schema)?;
    let file = std::fs::File::open(data).map_err(|e| io_err(data, e))?;
    let ext = data
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("jsonl" | "ndjson" | "json") => ingest_jsonl(file, schema),
        Some("csv") => ingest_csv(file, schema),
        _ => Err(IngestError::UnknownFormat(data.to_path_buf())),
    }
}

fn bad(line: usize, col: &ColumnSpec, found: impl std::fmt::Display) -> IngestError {
    IngestError::BadCell {
        line,
        column: col.name.clone(),
        expected: col.value_type,
        found: found.to_string(),
    }
}

fn json_cell(line: usize, col: &ColumnSpec, v: &Json) -> Result<Value, IngestError> {
    if v.is_null() {
        return Ok(Value::Null);
    }
    let text = || v.as_str().map(str::to_string).ok_or_else(|| bad(line, col, v));
    Ok(match col.value_type {
        ValueType::Integer => Value::Integer(v.as_i64().ok_or_else(|| bad(line, col, v))?),
        ValueType::Float => Value::Float(v.as_f64().ok_or_else(|| bad(line, col, v))?),
        ValueType::Text => Value::Text(text()?),
        ValueType::Enum => Value::Enum(text()?),
        ValueType::UnstructuredText => match v {
            Json::Array(turns) => Value::UnstructuredText(dialog_text(turns).ok_or_else(|| bad(line, col, v))?),
            _ => Value::UnstructuredText(text()?),
        },
        ValueType::Datetime => match v {
            Json::Number(n) => Value::Datetime(n.as_i64().ok_or_else(|| bad(line, col, v))?),
            Json::String(s) => Value::Datetime(parse_datetime(s).ok_or_else(|| bad(line, col, v))?),
            _ => return Err(bad(line, col, v)),
        },
        ValueType::UnstructuredBlob => {
            #[derive(Deserialize)]
            struct Blob {
                media_type: String,
                bytes: Vec<u8>,
            }
            let b: Blob = serde_json::from_value(v.clone()).map_err(|_| bad(line, col, v))?;
            Value::UnstructuredBlob {
                bytes: b.bytes,
                media_type: b.media_type,
            }
        }
    })
}

/// A dialog given as `[[speaker, utterance], ...]` turns, rendered one
/// `speaker: utterance` line per turn.
fn dialog_text(turns: &[Json]) -> Option<String> {
    let lines = turns
        .iter()
        .map(|t| match t.as_array()?.as_slice() {
            [speaker, utterance] => Some(format!("{}: {}", speaker.as_str()?, utterance.as_str()?)),
            _ => None,
        })
        .collect::<Option<Vec<_>>>()?;
    Some(lines.join("\n"))
}

/// One JSON object per line; blank lines are skipped. Every schema column
/// must be present and no other field may appear.
pub fn ingest_jsonl(reader: impl Read, schema: Schema) -> Result<Table, IngestError> {
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| IngestError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Map<String, Json> =
            serde_json::from_str(&line).map_err(|e| IngestError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        if let Some(field) = obj.keys().find(|k| schema.position(k).is_none()) {
            return Err(IngestError::UnknownField {
                line: line_no,
                field: field.clone(),
            });
        }
        let row = schema
            .columns()
            .iter()
            .map(|col| match obj.get(&col.name) {
                Some(v) => json_cell(line_no, col, v),
                None => Err(IngestError::MissingColumn {
                    line: line_no,
                    column: col.name.clone(),
                }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    validate_table(schema, rows).map_err(|e| IngestError::Schema(e.to_string()))
}

fn csv_cell(line: usize, col: &ColumnSpec, s: &str) -> Result<Value, IngestError> {
    let textual = matches!(col.value_type, ValueType::Text | ValueType::UnstructuredText);
    if s.is_empty() && !textual {
        return Ok(Value::Null);
    }
    Ok(match col.value_type {
        ValueType::Integer => Value::Integer(s.trim().parse().map_err(|_| bad(line, col, s))?),
        ValueType::Float => Value::Float(s.trim().parse().map_err(|_| bad(line, col, s))?),
        ValueType::Text => Value::Text(s.to_string()),
        ValueType::Enum => Value::Enum(s.to_string()),
        ValueType::UnstructuredText => Value::UnstructuredText(s.to_string()),
        ValueType::Datetime => match s.trim().parse::<i64>() {
            Ok(secs) => Value::Datetime(secs),
            Err(_) => Value::Datetime(parse_datetime(s.trim()).ok_or_else(|| bad(line, col, s))?),
        },
        ValueType::UnstructuredBlob => return Err(bad(line, col, "CSV cannot carry blobs")),
    })
}

/// CSV with a header naming exactly the schema's columns, in any order.
/// Empty cells are NULL except in text columns.
pub fn ingest_csv(reader: impl Read, schema: Schema) -> Result<Table, IngestError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = r
        .headers()
        .map_err(|e| IngestError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if let Some(field) = header.iter().find(|h| schema.position(h).is_none()) {
        return Err(IngestError::UnknownField {
            line: 1,
            field: field.to_string(),
        });
    }
    let mut order = Vec::with_capacity(schema.len());
    for col in schema.columns() {
        let at = header
            .iter()
            .position(|h| h == col.name)
            .ok_or_else(|| IngestError::MissingColumn {
                line: 1,
                column: col.name.clone(),
            })?;
        order.push(at);
    }
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| IngestError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row = schema
            .columns()
            .iter()
            .zip(&order)
            .map(|(col, &at)| csv_cell(line, col, record.get(at).unwrap_or_default()))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    validate_table(schema, rows).map_err(|e| IngestError::Schema(e.to_string()))
}
