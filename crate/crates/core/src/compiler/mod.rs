//! Lowering parsed queries into costed kernel plans.

mod plan;
mod resolve;
mod simplify;

pub use plan::{
    bind, enumerate_plans, estimate_cost, explain, select_plan, BindOptions, Clause, CostParams,
    ExecutablePlan, Kernel, KernelKind, Plan, TableStats,
};
pub use resolve::{
    resolve, BoundFormula, BoundKey, BoundPredicate, GroupKeySpec, OutputColumn, ResolvedQuery,
    SortTarget,
};
pub use simplify::{simplify_dnf, Simplified};

use crate::model::ValueType;
use crate::uql::UqlError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompileError {
    #[error(transparent)]
    Uql(#[from] UqlError),
    #[error("unsupported literal position: integer {value} in {clause}")]
    UnsupportedLiteral { value: i64, clause: &'static str },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` must appear in GROUP BY or inside an aggregate")]
    NotGrouped(String),
    #[error("cannot compare column `{column}` of type {column_type} with {literal}")]
    TypeMismatch {
        column: String,
        column_type: ValueType,
        literal: String,
    },
    #[error("semantic clauses need an unstructured source column and the table has none")]
    NoSourceColumn,
    #[error("ambiguous source column for semantic clauses: `{}`; name one explicitly", .0.join("`, `"))]
    AmbiguousSource(Vec<String>),
    #[error("{0}")]
    Invalid(String),
}
