use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::value::{Value, ValueType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Structured,
    Unstructured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(rename = "type")]
    pub value_type: ValueType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
}

impl ColumnSpec {
    pub fn structured(name: impl Into<String>, value_type: ValueType) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Structured,
            value_type,
            vocabulary: None,
        }
    }

    pub fn unstructured_text(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Unstructured,
            value_type: ValueType::UnstructuredText,
            vocabulary: None,
        }
    }

    pub fn enumeration<S: Into<String>>(
        name: impl Into<String>,
        labels: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Structured,
            value_type: ValueType::Enum,
            vocabulary: Some(labels.into_iter().map(Into::into).collect()),
        }
    }

    pub fn is_unstructured(&self) -> bool {
        self.kind == ColumnKind::Unstructured
    }

    fn accepts(&self, value: &Value) -> bool {
        match value {
            Value::Null => true,
            other => other.value_type() == Some(self.value_type),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SchemaError {
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("column `{name}` is unstructured but declared as {value_type}")]
    UnstructuredKindMismatch { name: String, value_type: ValueType },
    #[error("column `{name}` of type {value_type} must be unstructured")]
    StructuredKindMismatch { name: String, value_type: ValueType },
    #[error("enum column `{0}` has no vocabulary")]
    MissingVocabulary(String),
    #[error("column `{0}` declares a vocabulary but is not an enum")]
    UnexpectedVocabulary(String),
    #[error("row {row}: expected {expected} cells, found {found}")]
    Arity {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column `{column}`: expected {expected}, found {found}")]
    TypeMismatch {
        row: usize,
        column: String,
        expected: ValueType,
        found: &'static str,
    },
    #[error("row {row}, column `{column}`: `{label}` is not in the declared vocabulary")]
    UnknownEnumLabel {
        row: usize,
        column: String,
        label: String,
    },
}

/// Ordered column declarations with unique names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ColumnSpec>", into = "Vec<ColumnSpec>")]
pub struct Schema {
    columns: Vec<ColumnSpec>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self, SchemaError> {
        let mut index = HashMap::with_capacity(columns.len());
        for (i, col) in columns.iter().enumerate() {
            if index.insert(col.name.clone(), i).is_some() {
                return Err(SchemaError::DuplicateColumn(col.name.clone()));
            }
            match (col.kind, col.value_type.is_unstructured()) {
                (ColumnKind::Unstructured, false) => {
                    return Err(SchemaError::UnstructuredKindMismatch {
                        name: col.name.clone(),
                        value_type: col.value_type,
                    })
                }
                (ColumnKind::Structured, true) => {
                    return Err(SchemaError::StructuredKindMismatch {
                        name: col.name.clone(),
                        value_type: col.value_type,
                    })
                }
                _ => {}
            }
            match (col.value_type, &col.vocabulary) {
                (ValueType::Enum, None) => {
                    return Err(SchemaError::MissingVocabulary(col.name.clone()))
                }
                (t, Some(_)) if t != ValueType::Enum => {
                    return Err(SchemaError::UnexpectedVocabulary(col.name.clone()))
                }
                _ => {}
            }
        }
        Ok(Self { columns, index })
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.position(name).map(|i| &self.columns[i])
    }

    pub fn unstructured_columns(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(|c| c.is_unstructured())
    }
}

impl TryFrom<Vec<ColumnSpec>> for Schema {
    type Error = SchemaError;

    fn try_from(columns: Vec<ColumnSpec>) -> Result<Self, Self::Error> {
        Schema::new(columns)
    }
}

impl From<Schema> for Vec<ColumnSpec> {
    fn from(schema: Schema) -> Self {
        schema.columns
    }
}

pub type Row = Vec<Value>;

/// An immutable, validated table. Row identity is the ingestion index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    schema: Schema,
    rows: Vec<Row>,
}

impl Table {
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn row(&self, index: usize) -> &Row {
        &self.rows[index]
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_columns(&self) -> usize {
        self.schema.len()
    }

    pub fn view(&self, index: usize) -> RowView<'_> {
        RowView {
            index,
            schema: &self.schema,
            cells: &self.rows[index],
        }
    }

    pub fn cell(&self, row: usize, column: &str) -> Option<&Value> {
        self.schema.position(column).map(|j| &self.rows[row][j])
    }

    /// Concatenated text of the given unstructured columns for one row.
    pub fn row_text(&self, row: usize, columns: &[String]) -> String {
        self.view(row).text_of(columns)
    }

    pub fn into_parts(self) -> (Schema, Vec<Row>) {
        (self.schema, self.rows)
    }
}

impl<'de> Deserialize<'de> for Table {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            schema: Schema,
            rows: Vec<Row>,
        }
        let raw = Raw::deserialize(deserializer)?;
        validate_table(raw.schema, raw.rows).map_err(serde::de::Error::custom)
    }
}

/// Check every row against the schema and build a [`Table`].
///
/// Reports the first offending `(row, column)`.
pub fn validate_table(schema: Schema, rows: Vec<Row>) -> Result<Table, SchemaError> {
    let width = schema.len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(SchemaError::Arity {
                row: i,
                expected: width,
                found: row.len(),
            });
        }
        for (col, cell) in schema.columns.iter().zip(row) {
            if !col.accepts(cell) {
                return Err(SchemaError::TypeMismatch {
                    row: i,
                    column: col.name.clone(),
                    expected: col.value_type,
                    found: cell.type_name(),
                });
            }
            if let (Value::Enum(label), Some(vocab)) = (cell, &col.vocabulary) {
                if !vocab.iter().any(|v| v == label) {
                    return Err(SchemaError::UnknownEnumLabel {
                        row: i,
                        column: col.name.clone(),
                        label: label.clone(),
                    });
                }
            }
        }
    }
    Ok(Table { schema, rows })
}

/// A borrowed row together with its schema and ingestion index.
#[derive(Debug, Clone, Copy)]
pub struct RowView<'a> {
    pub index: usize,
    pub schema: &'a Schema,
    pub cells: &'a [Value],
}

impl<'a> RowView<'a> {
    pub fn get(&self, column: &str) -> Option<&'a Value> {
        self.schema.position(column).map(|j| &self.cells[j])
    }

    /// Text of the named columns, one per line; a single column yields its
    /// text verbatim.
    pub fn text_of(&self, columns: &[String]) -> String {
        let parts: Vec<String> = columns
            .iter()
            .filter_map(|c| self.get(c))
            .map(|v| match v {
                Value::UnstructuredText(s) => s.clone(),
                other => other.render(),
            })
            .collect();
        parts.join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn int_schema() -> Schema {
        Schema::new(vec![ColumnSpec::structured("a", ValueType::Integer)]).unwrap()
    }

    #[test]
    fn well_formed_minimum() {
        let t = validate_table(int_schema(), vec![vec![Value::Integer(1)], vec![Value::Integer(2)]])
            .unwrap();
        assert_eq!((t.num_rows(), t.num_columns()), (2, 1));
    }

    #[test]
    fn type_mismatch_reports_position() {
        let err = validate_table(
            int_schema(),
            vec![vec![Value::Integer(1)], vec![Value::Text("x".into())]],
        )
        .unwrap_err();
        assert_eq!(
            err,
            SchemaError::TypeMismatch {
                row: 1,
                column: "a".into(),
                expected: ValueType::Integer,
                found: "text"
            }
        );
    }

    #[test]
    fn arity_and_enum_errors() {
        let err = validate_table(int_schema(), vec![vec![]]).unwrap_err();
        assert!(matches!(err, SchemaError::Arity { row: 0, .. }));

        let schema = Schema::new(vec![ColumnSpec::enumeration("flow", ["a", "b"])]).unwrap();
        let err = validate_table(schema, vec![vec![Value::Enum("c".into())]]).unwrap_err();
        assert!(matches!(err, SchemaError::UnknownEnumLabel { ref label, .. } if label == "c"));
    }

    #[test]
    fn schema_invariants() {
        let dup = Schema::new(vec![
            ColumnSpec::structured("a", ValueType::Integer),
            ColumnSpec::structured("a", ValueType::Float),
        ]);
        assert_eq!(dup.unwrap_err(), SchemaError::DuplicateColumn("a".into()));

        let bad = Schema::new(vec![ColumnSpec {
            name: "review".into(),
            kind: ColumnKind::Unstructured,
            value_type: ValueType::Text,
            vocabulary: None,
        }]);
        assert!(matches!(bad, Err(SchemaError::UnstructuredKindMismatch { .. })));
        assert!(matches!(
            Schema::new(vec![ColumnSpec::structured("e", ValueType::Enum)]),
            Err(SchemaError::MissingVocabulary(_))
        ));
    }
}
