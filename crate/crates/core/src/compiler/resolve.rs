use crate::model::{parse_datetime, AggOp, Schema, Value, ValueType};
use crate::uql::{
    classify, validate, AggArg, CompareOp, Dnf, GroupExpr, Literal, OrderKey, Predicate, Query,
    QueryClass, SelectItem,
};

use super::CompileError;

/// A WHERE atom with its column resolved and literal typed.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundPredicate {
    Semantic(String),
    Compare {
        column: String,
        position: usize,
        op: CompareOp,
        value: Value,
    },
}

impl BoundPredicate {
    pub fn is_semantic(&self) -> bool {
        matches!(self, BoundPredicate::Semantic(_))
    }
}

pub type BoundFormula = Dnf<BoundPredicate>;

#[derive(Debug, Clone, PartialEq)]
pub enum GroupKeySpec {
    Column { name: String, position: usize },
    Semantic { attribute: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundKey {
    pub spec: GroupKeySpec,
    /// Name the key is referred to by: its alias, column name or text.
    pub output: String,
}

impl BoundKey {
    pub fn is_semantic(&self) -> bool {
        matches!(self.spec, GroupKeySpec::Semantic { .. })
    }
}

/// One column of the result.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputColumn {
    /// A table column, copied through (non-aggregation).
    Column { name: String, position: usize },
    /// An attribute extracted by the oracle (non-aggregation).
    Extract { name: String, attribute: String },
    /// A group key's value (aggregation).
    Key { name: String, key: usize },
    /// COUNT/SUM/AVG per group. `column` is `None` for `COUNT(*)`.
    Aggregate {
        name: String,
        op: AggOp,
        column: Option<usize>,
    },
}

impl OutputColumn {
    pub fn name(&self) -> &str {
        match self {
            OutputColumn::Column { name, .. }
            | OutputColumn::Extract { name, .. }
            | OutputColumn::Key { name, .. }
            | OutputColumn::Aggregate { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortTarget {
    /// A table column that need not be selected.
    Table(usize),
    Output(usize),
    Key(usize),
}

/// A query checked against a schema: columns located, literals typed, the
/// select list expanded and group keys collected.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedQuery {
    pub query: Query,
    pub class: QueryClass,
    pub filter: Option<BoundFormula>,
    pub outputs: Vec<OutputColumn>,
    /// Aggregation only. Semantic select literals appear here as implicit
    /// keys.
    pub keys: Vec<BoundKey>,
    pub sort: Vec<SortTarget>,
    pub descending: bool,
    pub limit: Option<usize>,
}

impl ResolvedQuery {
    pub fn where_semantic(&self) -> bool {
        self.filter
            .as_ref()
            .is_some_and(|f| f.predicates().any(BoundPredicate::is_semantic))
    }

    pub fn group_semantic(&self) -> bool {
        self.keys.iter().any(BoundKey::is_semantic)
    }

    /// Whether producing the select list needs the oracle.
    pub fn select_semantic(&self) -> bool {
        self.outputs.iter().any(|o| match o {
            OutputColumn::Extract { .. } => true,
            OutputColumn::Key { key, .. } => self.keys[*key].is_semantic(),
            _ => false,
        })
    }

    pub fn is_semantic(&self) -> bool {
        self.where_semantic() || self.group_semantic() || self.select_semantic()
    }

    /// Attributes extracted per row by a non-aggregation SELECT, in output
    /// order without repeats.
    pub fn extract_attributes(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for o in &self.outputs {
            if let OutputColumn::Extract { attribute, .. } = o {
                if !out.contains(attribute) {
                    out.push(attribute.clone());
                }
            }
        }
        out
    }
}

fn column(schema: &Schema, name: &str) -> Result<usize, CompileError> {
    schema
        .position(name)
        .ok_or_else(|| CompileError::UnknownColumn(name.to_string()))
}

fn bind_literal(
    column: &str,
    column_type: ValueType,
    literal: &Literal,
) -> Result<Value, CompileError> {
    let mismatch = || CompileError::TypeMismatch {
        column: column.to_string(),
        column_type,
        literal: literal.to_string(),
    };
    Ok(match (column_type, literal) {
        (ValueType::Integer | ValueType::Float, Literal::Integer(v)) => Value::Integer(*v),
        (ValueType::Integer | ValueType::Float, Literal::Float(v)) => Value::Float(*v),
        (ValueType::Text | ValueType::Enum, Literal::Text(s)) => Value::Text(s.clone()),
        (ValueType::Datetime, Literal::Text(s)) => Value::Datetime(parse_datetime(s).ok_or_else(mismatch)?),
        (ValueType::Datetime, Literal::Integer(v)) => Value::Datetime(*v),
        _ => return Err(mismatch()),
    })
}

/// Semantic text with runs of whitespace collapsed, so a semantic string
/// broken across lines reads as one sentence.
fn spec_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn bind_predicate(schema: &Schema, p: &Predicate) -> Result<BoundPredicate, CompileError> {
    match p {
        Predicate::Semantic(t) => Ok(BoundPredicate::Semantic(spec_text(t))),
        Predicate::Compare { column: name, op, value } => {
            let position = column(schema, name)?;
            let spec = &schema.columns()[position];
            let value = bind_literal(name, spec.value_type, value)?;
            Ok(BoundPredicate::Compare {
                column: name.clone(),
                position,
                op: *op,
                value,
            })
        }
    }
}

/// Check `query` against `schema`.
pub fn resolve(query: &Query, schema: &Schema) -> Result<ResolvedQuery, CompileError> {
    validate(query)?;
    let class = classify(query);
    let filter = match &query.where_clause {
        None => None,
        Some(w) => Some(Dnf {
            disjuncts: w
                .dnf
                .disjuncts
                .iter()
                .map(|c| c.iter().map(|p| bind_predicate(schema, p)).collect())
                .collect::<Result<_, _>>()?,
        }),
    };

    let mut keys = Vec::new();
    let mut outputs = Vec::new();
    match class {
        QueryClass::NonAggregation => {
            for item in &query.select {
                match item {
                    SelectItem::All => {
                        for (position, c) in schema.columns().iter().enumerate() {
                            outputs.push(OutputColumn::Column {
                                name: c.name.clone(),
                                position,
                            });
                        }
                    }
                    SelectItem::Column { name, .. } => outputs.push(OutputColumn::Column {
                        name: item.output_name(),
                        position: column(schema, name)?,
                    }),
                    SelectItem::Semantic { text, .. } => outputs.push(OutputColumn::Extract {
                        name: item.output_name(),
                        attribute: spec_text(text),
                    }),
                    SelectItem::Integer(v) => {
                        return Err(CompileError::UnsupportedLiteral {
                            value: *v,
                            clause: "SELECT",
                        })
                    }
                    SelectItem::Aggregate { .. } => unreachable!("classified as aggregation"),
                }
            }
        }
        QueryClass::Aggregation => {
            for k in query.group_by.iter().flatten() {
                let spec = match &k.expr {
                    GroupExpr::Column(name) => GroupKeySpec::Column {
                        name: name.clone(),
                        position: column(schema, name)?,
                    },
                    GroupExpr::Semantic(t) => GroupKeySpec::Semantic {
                        attribute: spec_text(t),
                    },
                };
                keys.push(BoundKey {
                    spec,
                    output: k.output_name(),
                });
            }
            for item in &query.select {
                let output = match item {
                    SelectItem::All => {
                        return Err(CompileError::Invalid(
                            "SELECT * cannot be combined with aggregation".into(),
                        ))
                    }
                    SelectItem::Integer(v) => {
                        return Err(CompileError::UnsupportedLiteral {
                            value: *v,
                            clause: "SELECT",
                        })
                    }
                    SelectItem::Column { name, .. } => {
                        let key = keys
                            .iter()
                            .position(|k| &k.output == name)
                            .or_else(|| {
                                keys.iter().position(|k| {
                                    matches!(&k.spec, GroupKeySpec::Column { name: c, .. } if c == name)
                                })
                            })
                            .ok_or_else(|| {
                                if schema.position(name).is_none() {
                                    CompileError::UnknownColumn(name.clone())
                                } else {
                                    CompileError::NotGrouped(name.clone())
                                }
                            })?;
                        OutputColumn::Key {
                            name: item.output_name(),
                            key,
                        }
                    }
                    SelectItem::Semantic { text, .. } => {
                        // a semantic literal in an aggregation groups by itself
                        let text = &spec_text(text);
                        let existing = keys.iter().position(
                            |k| matches!(&k.spec, GroupKeySpec::Semantic { attribute } if attribute == text),
                        );
                        let key = match existing {
                            Some(k) => k,
                            None => {
                                keys.push(BoundKey {
                                    spec: GroupKeySpec::Semantic {
                                        attribute: text.clone(),
                                    },
                                    output: item.output_name(),
                                });
                                keys.len() - 1
                            }
                        };
                        OutputColumn::Key {
                            name: item.output_name(),
                            key,
                        }
                    }
                    SelectItem::Aggregate { op, arg, .. } => {
                        let column = match arg {
                            AggArg::All if *op == AggOp::Count => None,
                            AggArg::All => {
                                return Err(CompileError::Invalid(format!(
                                    "{}(*) is not defined; name a numeric column",
                                    op.keyword()
                                )))
                            }
                            AggArg::Column(name) => {
                                let position = column(schema, name)?;
                                let t = schema.columns()[position].value_type;
                                if *op != AggOp::Count && !matches!(t, ValueType::Integer | ValueType::Float) {
                                    return Err(CompileError::Invalid(format!(
                                        "{} needs a numeric column; `{name}` is {t}",
                                        op.keyword()
                                    )));
                                }
                                Some(position)
                            }
                        };
                        OutputColumn::Aggregate {
                            name: item.output_name(),
                            op: *op,
                            column,
                        }
                    }
                };
                outputs.push(output);
            }
        }
    }

    let mut sort = Vec::new();
    let mut descending = false;
    if let Some(order) = &query.order_by {
        descending = order.descending;
        for key in &order.keys {
            let name = match key {
                OrderKey::Column(c) => c,
                OrderKey::Integer(v) => {
                    return Err(CompileError::UnsupportedLiteral {
                        value: *v,
                        clause: "ORDER BY",
                    })
                }
                OrderKey::Semantic(_) => unreachable!("rejected by validate"),
            };
            sort.push(sort_target(name, class, &outputs, &keys, schema)?);
        }
    }

    Ok(ResolvedQuery {
        query: query.clone(),
        class,
        filter,
        outputs,
        keys,
        sort,
        descending,
        limit: query.limit.map(|l| usize::try_from(l).unwrap_or(usize::MAX)),
    })
}

fn sort_target(
    name: &str,
    class: QueryClass,
    outputs: &[OutputColumn],
    keys: &[BoundKey],
    schema: &Schema,
) -> Result<SortTarget, CompileError> {
    let concrete = |position: usize| {
        if schema.columns()[position].is_unstructured() {
            Err(CompileError::Invalid(format!(
                "ORDER BY requires a concrete column; `{name}` is unstructured"
            )))
        } else {
            Ok(())
        }
    };
    if let Some(i) = outputs.iter().position(|o| o.name() == name) {
        if let OutputColumn::Column { position, .. } = &outputs[i] {
            concrete(*position)?;
        }
        return Ok(SortTarget::Output(i));
    }
    match class {
        QueryClass::NonAggregation => {
            let position = schema
                .position(name)
                .ok_or_else(|| CompileError::UnknownColumn(name.to_string()))?;
            concrete(position)?;
            Ok(SortTarget::Table(position))
        }
        QueryClass::Aggregation => {
            if let Some(k) = keys.iter().position(|k| k.output == name) {
                return Ok(SortTarget::Key(k));
            }
            // `ORDER BY count` names the one unaliased COUNT aggregate
            let by_keyword: Vec<usize> = outputs
                .iter()
                .enumerate()
                .filter(|(_, o)| {
                    matches!(o, OutputColumn::Aggregate { op, .. } if op.keyword().eq_ignore_ascii_case(name))
                })
                .map(|(i, _)| i)
                .collect();
            match by_keyword.as_slice() {
                [i] => Ok(SortTarget::Output(*i)),
                [] if schema.position(name).is_some() => Err(CompileError::NotGrouped(name.to_string())),
                [] => Err(CompileError::UnknownColumn(name.to_string())),
                _ => Err(CompileError::Invalid(format!(
                    "ORDER BY `{name}` matches several aggregates; alias one"
                ))),
            }
        }
    }
}
