//! Tables mixing structured and unstructured columns, and weighted samples
//! drawn from them.

mod stochastic;
mod table;
mod value;

pub use stochastic::{
    weighted_aggregate, weighted_estimate, AggOp, AggregateError, Estimate, SampleError,
    StochasticTable, Strata,
};
pub use table::{validate_table, ColumnKind, ColumnSpec, Row, RowView, Schema, SchemaError, Table};
pub use value::{parse_datetime, CompareError, Value, ValueType};
