use std::fmt;

use serde::{Deserialize, Serialize};

use super::dnf::{to_dnf, BoolExpr, Dnf};
use super::token::quote;
use super::UqlError;
use crate::model::AggOp;

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub select: Vec<SelectItem>,
    pub from: String,
    pub where_clause: Option<WhereClause>,
    pub group_by: Option<Vec<GroupKey>>,
    pub order_by: Option<OrderBy>,
    pub limit: Option<u64>,
    pub to: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    All,
    Column {
        name: String,
        alias: Option<String>,
    },
    Semantic {
        text: String,
        alias: Option<String>,
    },
    Aggregate {
        op: AggOp,
        arg: AggArg,
        alias: Option<String>,
    },
    Integer(i64),
}

impl SelectItem {
    pub fn alias(&self) -> Option<&str> {
        match self {
            SelectItem::Column { alias, .. }
            | SelectItem::Semantic { alias, .. }
            | SelectItem::Aggregate { alias, .. } => alias.as_deref(),
            _ => None,
        }
    }

    /// Output column name: the alias when present, else the source text.
    pub fn output_name(&self) -> String {
        if let Some(a) = self.alias() {
            return a.to_string();
        }
        match self {
            SelectItem::All => "*".into(),
            SelectItem::Column { name, .. } => name.clone(),
            SelectItem::Semantic { text, .. } => text.clone(),
            SelectItem::Aggregate { op, arg, .. } => format!("{}({})", op.keyword(), arg),
            SelectItem::Integer(v) => v.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AggArg {
    All,
    Column(String),
}

impl fmt::Display for AggArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggArg::All => f.write_str("*"),
            AggArg::Column(c) => f.write_str(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum GroupExpr {
    Column(String),
    Semantic(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupKey {
    pub expr: GroupExpr,
    pub alias: Option<String>,
}

impl GroupKey {
    pub fn output_name(&self) -> String {
        match (&self.alias, &self.expr) {
            (Some(a), _) => a.clone(),
            (None, GroupExpr::Column(c)) => c.clone(),
            (None, GroupExpr::Semantic(t)) => t.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OrderKey {
    Column(String),
    Semantic(String),
    Integer(i64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderBy {
    pub keys: Vec<OrderKey>,
    pub descending: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CompareOp {
    /// `<>` normalizes to `!=`.
    pub fn parse(lexeme: &str) -> Option<CompareOp> {
        Some(match lexeme {
            "=" => CompareOp::Eq,
            "!=" | "<>" => CompareOp::Ne,
            "<" => CompareOp::Lt,
            "<=" => CompareOp::Le,
            ">" => CompareOp::Gt,
            ">=" => CompareOp::Ge,
            _ => return None,
        })
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "=",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
        }
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CompareOp::Eq => ord == Equal,
            CompareOp::Ne => ord != Equal,
            CompareOp::Lt => ord == Less,
            CompareOp::Le => ord != Greater,
            CompareOp::Gt => ord == Greater,
            CompareOp::Ge => ord != Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Text(String),
    Integer(i64),
    Float(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    Semantic(String),
    Compare {
        column: String,
        op: CompareOp,
        value: Literal,
    },
}

impl Predicate {
    pub fn is_semantic(&self) -> bool {
        matches!(self, Predicate::Semantic(_))
    }
}

pub type DnfFormula = Dnf<Predicate>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoolOp {
    And,
    Or,
}

/// A WHERE clause as written: predicates chained left-associatively by
/// AND/OR with no precedence, plus its normal form.
#[derive(Debug, Clone, PartialEq)]
pub struct WhereClause {
    pub first: Predicate,
    pub rest: Vec<(BoolOp, Predicate)>,
    pub dnf: DnfFormula,
}

impl WhereClause {
    pub fn new(first: Predicate, rest: Vec<(BoolOp, Predicate)>) -> Result<Self, UqlError> {
        let tree = chain_tree(&first, &rest);
        let dnf = to_dnf(&tree)?;
        Ok(Self { first, rest, dnf })
    }

    pub fn tree(&self) -> BoolExpr<Predicate> {
        chain_tree(&self.first, &self.rest)
    }

    pub fn predicates(&self) -> impl Iterator<Item = &Predicate> {
        std::iter::once(&self.first).chain(self.rest.iter().map(|(_, p)| p))
    }
}

fn chain_tree(first: &Predicate, rest: &[(BoolOp, Predicate)]) -> BoolExpr<Predicate> {
    rest.iter()
        .fold(BoolExpr::Pred(first.clone()), |acc, (op, p)| match op {
            BoolOp::And => BoolExpr::and(acc, BoolExpr::Pred(p.clone())),
            BoolOp::Or => BoolExpr::or(acc, BoolExpr::Pred(p.clone())),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryClass {
    Aggregation,
    NonAggregation,
}

impl fmt::Display for QueryClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryClass::Aggregation => "aggregation",
            QueryClass::NonAggregation => "non-aggregation",
        })
    }
}

/// Aggregation iff the query has an aggregate select item or a GROUP BY.
pub fn classify(query: &Query) -> QueryClass {
    let has_agg = query
        .select
        .iter()
        .any(|s| matches!(s, SelectItem::Aggregate { .. }));
    if has_agg || query.group_by.is_some() {
        QueryClass::Aggregation
    } else {
        QueryClass::NonAggregation
    }
}

impl Query {
    pub fn class(&self) -> QueryClass {
        classify(self)
    }
}

// ---- printing ----

fn write_alias(f: &mut fmt::Formatter<'_>, alias: &Option<String>) -> fmt::Result {
    match alias {
        Some(a) => write!(f, " AS {a}"),
        None => Ok(()),
    }
}

/// Render a float so that it lexes as a FLOAT token and parses back to the
/// same value.
pub(crate) fn format_float(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains('.') && !s.contains(['e', 'E']) {
        return s;
    }
    for prec in 1..=1100 {
        let s = format!("{v:.prec$}");
        if s.parse::<f64>().ok() == Some(v) {
            return s;
        }
    }
    format!("{v:.1100}")
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Text(t) => f.write_str(&quote(t)),
            Literal::Integer(i) => write!(f, "{i}"),
            Literal::Float(v) => f.write_str(&format_float(*v)),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Semantic(t) => f.write_str(&quote(t)),
            Predicate::Compare { column, op, value } => {
                write!(f, "{column} {} {value}", op.symbol())
            }
        }
    }
}

impl fmt::Display for SelectItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectItem::All => f.write_str("*"),
            SelectItem::Column { name, alias } => {
                f.write_str(name)?;
                write_alias(f, alias)
            }
            SelectItem::Semantic { text, alias } => {
                f.write_str(&quote(text))?;
                write_alias(f, alias)
            }
            SelectItem::Aggregate { op, arg, alias } => {
                write!(f, "{}({arg})", op.keyword())?;
                write_alias(f, alias)
            }
            SelectItem::Integer(v) => write!(f, "{v}"),
        }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        for (i, item) in self.select.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{item}")?;
        }
        write!(f, " FROM {}", self.from)?;
        if let Some(w) = &self.where_clause {
            write!(f, " WHERE {}", w.first)?;
            for (op, p) in &w.rest {
                let kw = match op {
                    BoolOp::And => "AND",
                    BoolOp::Or => "OR",
                };
                write!(f, " {kw} {p}")?;
            }
        }
        if let Some(keys) = &self.group_by {
            f.write_str(" GROUP BY ")?;
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                match &k.expr {
                    GroupExpr::Column(c) => f.write_str(c)?,
                    GroupExpr::Semantic(t) => f.write_str(&quote(t))?,
                }
                write_alias(f, &k.alias)?;
            }
        }
        if let Some(order) = &self.order_by {
            f.write_str(" ORDER BY ")?;
            for (i, k) in order.keys.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                match k {
                    OrderKey::Column(c) => f.write_str(c)?,
                    OrderKey::Semantic(t) => f.write_str(&quote(t))?,
                    OrderKey::Integer(v) => write!(f, "{v}")?,
                }
            }
            if order.descending {
                f.write_str(" DESC")?;
            }
        }
        if let Some(n) = self.limit {
            write!(f, " LIMIT {n}")?;
        }
        if let Some(t) = &self.to {
            write!(f, " TO {t}")?;
        }
        Ok(())
    }
}
