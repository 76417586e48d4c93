//! UQL: tokenizer, recursive-descent parser, query classification and
//! WHERE normalization.

mod ast;
mod dnf;
mod lexer;
mod parser;
mod token;

pub use ast::{
    classify, AggArg, BoolOp, CompareOp, DnfFormula, GroupExpr, GroupKey, Literal, OrderBy,
    OrderKey, Predicate, Query, QueryClass, SelectItem, WhereClause,
};
pub use dnf::{to_dnf, BoolExpr, Dnf, MAX_DISJUNCTS};
pub use lexer::tokenize;
pub use parser::parse;
pub use token::{quote, Span, Token, TokenKind};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum UqlError {
    #[error("lexical error at byte {offset}: {message}")]
    Lex { offset: usize, message: String },
    #[error("syntax error at {span}: expected one of [{}], found `{found}`", expected.join(", "))]
    Syntax {
        span: Span,
        expected: Vec<String>,
        found: String,
    },
    #[error("duplicate {clause} clause at {span}")]
    DuplicateClause { clause: String, span: Span },
    #[error("alias `{0}` is defined more than once")]
    DuplicateAlias(String),
    #[error("query too complex: WHERE expands to {disjuncts} disjuncts (limit {MAX_DISJUNCTS})")]
    TooComplex { disjuncts: usize },
    #[error("{0}")]
    Semantic(String),
}

impl UqlError {
    /// Byte offset the error points at, when it has one.
    pub fn offset(&self) -> Option<usize> {
        match self {
            UqlError::Lex { offset, .. } => Some(*offset),
            UqlError::Syntax { span, .. } | UqlError::DuplicateClause { span, .. } => {
                Some(span.start)
            }
            _ => None,
        }
    }
}

/// Tokenize and parse in one step.
pub fn parse_query(source: &str) -> Result<Query, UqlError> {
    let tokens = tokenize(source)?;
    parse(&tokens)
}

/// Schema-independent checks run after parsing.
pub fn validate(query: &Query) -> Result<(), UqlError> {
    if let Some(order) = &query.order_by {
        if order.keys.iter().any(|k| matches!(k, OrderKey::Semantic(_))) {
            return Err(UqlError::Semantic(
                "ORDER BY requires a concrete column".into(),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AggOp;

    const FIG2_LEFT: &str = r#"SELECT reason, COUNT(*) as count
FROM movie_reviews
WHERE movie_year < 2020
GROUP BY "the reason why the review is positive" AS reason"#;

    const FIG2_RIGHT: &str = r#"SELECT agent_name, "reason to cancel"
FROM airline_customer_service_log
WHERE "the customer asked to cancel the flight"
LIMIT 100"#;

    #[test]
    fn figure_two_left() {
        let q = parse_query(FIG2_LEFT).unwrap();
        assert_eq!(
            q.group_by,
            Some(vec![GroupKey {
                expr: GroupExpr::Semantic("the reason why the review is positive".into()),
                alias: Some("reason".into()),
            }])
        );
        assert_eq!(
            q.select,
            vec![
                SelectItem::Column {
                    name: "reason".into(),
                    alias: None
                },
                SelectItem::Aggregate {
                    op: AggOp::Count,
                    arg: AggArg::All,
                    alias: Some("count".into())
                },
            ]
        );
        assert_eq!(classify(&q), QueryClass::Aggregation);
    }

    #[test]
    fn figure_two_right() {
        let q = parse_query(FIG2_RIGHT).unwrap();
        let w = q.where_clause.as_ref().unwrap();
        assert_eq!(w.dnf.disjuncts.len(), 1);
        assert_eq!(
            w.dnf.disjuncts[0],
            vec![Predicate::Semantic("the customer asked to cancel the flight".into())]
        );
        assert_eq!(q.limit, Some(100));
        assert_eq!(classify(&q), QueryClass::NonAggregation);
    }

    #[test]
    fn left_associative_where() {
        let q = parse_query(r#"SELECT * FROM t WHERE a = 1 AND "p" OR b > 2"#).unwrap();
        let a = Predicate::Compare {
            column: "a".into(),
            op: CompareOp::Eq,
            value: Literal::Integer(1),
        };
        let b = Predicate::Compare {
            column: "b".into(),
            op: CompareOp::Gt,
            value: Literal::Integer(2),
        };
        assert_eq!(
            q.where_clause.unwrap().dnf.disjuncts,
            vec![vec![a, Predicate::Semantic("p".into())], vec![b]]
        );
    }

    #[test]
    fn avg_is_aggregation() {
        assert_eq!(
            classify(&parse_query("SELECT AVG(score) FROM t").unwrap()),
            QueryClass::Aggregation
        );
    }

    #[test]
    fn diamond_operator_normalizes() {
        let q = parse_query("SELECT * FROM t WHERE a <> 3").unwrap();
        assert!(q.to_string().contains("a != 3"));
    }

    #[test]
    fn duplicate_clauses_rejected() {
        let err = parse_query("SELECT * FROM t LIMIT 1 LIMIT 2").unwrap_err();
        assert_eq!(
            err,
            UqlError::DuplicateClause {
                clause: "LIMIT".into(),
                span: Span::new(24, 29)
            }
        );
        assert!(matches!(
            parse_query(r#"SELECT * FROM t WHERE "a" WHERE "b""#),
            Err(UqlError::DuplicateClause { .. })
        ));
    }

    #[test]
    fn clauses_in_any_order() {
        let a = parse_query(r#"SELECT * FROM t LIMIT 5 WHERE "x" TO out"#).unwrap();
        let b = parse_query(r#"SELECT * FROM t TO out WHERE "x" LIMIT 5"#).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_alias_rejected() {
        assert_eq!(
            parse_query(r#"SELECT "a" AS x FROM t GROUP BY "b" AS x"#).unwrap_err(),
            UqlError::DuplicateAlias("x".into())
        );
    }

    #[test]
    fn order_by_semantic_rejected_in_validation() {
        let q = parse_query(r#"SELECT * FROM t ORDER BY "how funny it is" DESC"#).unwrap();
        assert_eq!(
            validate(&q).unwrap_err().to_string(),
            "ORDER BY requires a concrete column"
        );
    }

    #[test]
    fn syntax_error_lists_expectations() {
        match parse_query("SELECT FROM t") {
            Err(UqlError::Syntax { span, expected, .. }) => {
                assert_eq!(span, Span::new(7, 11));
                assert!(expected.contains(&"NL_LITERAL".to_string()));
            }
            other => panic!("unexpected {other:?}"),
        }
        match parse_query("SELECT * FROM") {
            Err(UqlError::Syntax { span, found, .. }) => {
                assert_eq!(span, Span::new(13, 13));
                assert_eq!(found, "end of input");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
