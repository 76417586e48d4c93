use std::cmp::Ordering;
use std::fmt::Write;

use serde_json::{json, Value as Json};

use crate::model::{ColumnSpec, Schema, SchemaError, Table, Value, ValueType, validate_table};

/// A concrete query result.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

/// Total order on values for sorting output: NULL first, then by
/// [`Value::compare`], falling back to type name and rendering for pairs
/// that do not compare.
pub fn value_order(a: &Value, b: &Value) -> Ordering {
    a.compare(b).unwrap_or_else(|_| {
        a.type_name()
            .cmp(b.type_name())
            .then_with(|| a.render().cmp(&b.render()))
    })
}

impl ResultTable {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Rows sorted lexicographically by value, for order-insensitive
    /// comparison.
    pub fn canonical(&self) -> ResultTable {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| value_order(x, y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        });
        ResultTable {
            columns: self.columns.clone(),
            rows,
        }
    }

    /// Aligned plain text with a header rule.
    pub fn render_text(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| r.iter().map(display_cell).collect())
            .collect();
        let mut widths: Vec<usize> = self.columns.iter().map(|c| c.chars().count()).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, parts: &[String]| {
            let padded: Vec<String> = parts
                .iter()
                .zip(&widths)
                .map(|(p, &w)| format!("{p:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", padded.join(" | ").trim_end());
        };
        line(&mut out, &self.columns);
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        let _ = writeln!(out, "{}", rule.join("-+-"));
        for row in &cells {
            line(&mut out, row);
        }
        let _ = writeln!(out, "({} row{})", self.rows.len(), if self.rows.len() == 1 { "" } else { "s" });
        out
    }

    pub fn to_json(&self) -> Json {
        let rows: Vec<Json> = self
            .rows
            .iter()
            .map(|r| {
                let obj: serde_json::Map<String, Json> = self
                    .columns
                    .iter()
                    .zip(r)
                    .map(|(c, v)| (c.clone(), value_json(v)))
                    .collect();
                Json::Object(obj)
            })
            .collect();
        json!({ "columns": self.columns, "rows": rows })
    }

    pub fn render_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| match v {
                Value::Null => String::new(),
                v => v.render(),
            }))?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// A table over the result, so it can be queried again. Column types
    /// come from the first non-null value, widened to float when integers
    /// and floats mix; all-null columns become text.
    pub fn to_table(&self) -> Result<Table, SchemaError> {
        let columns = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let mut t = self
                    .rows
                    .iter()
                    .find_map(|r| r[j].value_type())
                    .unwrap_or(ValueType::Text);
                if t == ValueType::Integer
                    && self.rows.iter().any(|r| matches!(r[j], Value::Float(_)))
                {
                    t = ValueType::Float;
                }
                match t {
                    ValueType::UnstructuredText | ValueType::UnstructuredBlob => ColumnSpec {
                        name: name.clone(),
                        kind: crate::model::ColumnKind::Unstructured,
                        value_type: t,
                        vocabulary: None,
                    },
                    ValueType::Enum => {
                        let mut labels: Vec<String> = self
                            .rows
                            .iter()
                            .filter_map(|r| r[j].as_str().map(str::to_string))
                            .collect();
                        labels.sort();
                        labels.dedup();
                        ColumnSpec::enumeration(name.clone(), labels)
                    }
                    t => ColumnSpec::structured(name.clone(), t),
                }
            })
            .collect();
        let schema = Schema::new(columns)?;
        let rows = self
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .zip(schema.columns())
                    .map(|(v, c)| match (v, c.value_type) {
                        // integer counts next to estimated ones
                        (Value::Integer(i), ValueType::Float) => Value::Float(*i as f64),
                        _ => v.clone(),
                    })
                    .collect()
            })
            .collect();
        validate_table(schema, rows)
    }
}

/// Text-table cell: floats at two decimals, newlines escaped.
fn display_cell(v: &Value) -> String {
    match v {
        Value::Float(f) if f.is_finite() => format!("{f:.2}"),
        v => v.render().replace('\n', "\\n"),
    }
}

fn value_json(v: &Value) -> Json {
    match v {
        Value::Null => Json::Null,
        Value::Integer(i) => json!(i),
        Value::Float(f) => json!(f),
        other => Json::String(other.render()),
    }
}
