use std::collections::HashSet;

use super::ast::*;
use super::token::{Span, Token, TokenKind};
use super::UqlError;
use crate::model::AggOp;

/// Parse a token stream into a [`Query`].
///
/// Optional clauses may appear in any order, each at most once.
pub fn parse(tokens: &[Token]) -> Result<Query, UqlError> {
    let mut p = Parser {
        tokens,
        pos: 0,
        end: tokens.last().map_or(0, |t| t.span.end),
    };
    let query = p.query()?;
    check_aliases(&query)?;
    Ok(query)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn peek_kind(&self) -> Option<TokenKind> {
        self.peek().map(|t| t.kind)
    }

    fn advance(&mut self) -> &'a Token {
        let t = &self.tokens[self.pos];
        self.pos += 1;
        t
    }

    fn error(&self, expected: &[&str]) -> UqlError {
        let (span, found) = match self.peek() {
            Some(t) => (t.span, t.lexeme.clone()),
            None => (Span::new(self.end, self.end), "end of input".to_string()),
        };
        UqlError::Syntax {
            span,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found,
        }
    }

    fn expect(&mut self, kind: TokenKind) -> Result<&'a Token, UqlError> {
        if self.peek_kind() == Some(kind) {
            Ok(self.advance())
        } else {
            Err(self.error(&[kind.name()]))
        }
    }

    fn eat(&mut self, kind: TokenKind) -> bool {
        if self.peek_kind() == Some(kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn query(&mut self) -> Result<Query, UqlError> {
        self.expect(TokenKind::Select)?;
        let mut select = vec![self.select_literal()?];
        while self.eat(TokenKind::Separator) {
            select.push(self.select_literal()?);
        }
        self.expect(TokenKind::From)?;
        let from = self.expect(TokenKind::VarName)?.lexeme.clone();

        let mut query = Query {
            select,
            from,
            where_clause: None,
            group_by: None,
            order_by: None,
            limit: None,
            to: None,
        };
        while let Some(tok) = self.peek() {
            let dup = |name: &str| UqlError::DuplicateClause {
                clause: name.to_string(),
                span: tok.span,
            };
            match tok.kind {
                TokenKind::Where => {
                    if query.where_clause.is_some() {
                        return Err(dup("WHERE"));
                    }
                    self.advance();
                    query.where_clause = Some(self.where_expression()?);
                }
                TokenKind::Group => {
                    if query.group_by.is_some() {
                        return Err(dup("GROUP BY"));
                    }
                    self.advance();
                    self.expect(TokenKind::By)?;
                    query.group_by = Some(self.group_by_expression()?);
                }
                TokenKind::Order => {
                    if query.order_by.is_some() {
                        return Err(dup("ORDER BY"));
                    }
                    self.advance();
                    self.expect(TokenKind::By)?;
                    query.order_by = Some(self.order_by_expression()?);
                }
                TokenKind::Limit => {
                    if query.limit.is_some() {
                        return Err(dup("LIMIT"));
                    }
                    self.advance();
                    let t = self.expect(TokenKind::Integer)?;
                    let n: i64 = t.lexeme.parse().map_err(|_| UqlError::Syntax {
                        span: t.span,
                        expected: vec!["positive INTEGER".into()],
                        found: t.lexeme.clone(),
                    })?;
                    if n <= 0 {
                        return Err(UqlError::Syntax {
                            span: t.span,
                            expected: vec!["positive INTEGER".into()],
                            found: t.lexeme.clone(),
                        });
                    }
                    query.limit = Some(n as u64);
                }
                TokenKind::To => {
                    if query.to.is_some() {
                        return Err(dup("TO"));
                    }
                    self.advance();
                    query.to = Some(self.expect(TokenKind::VarName)?.lexeme.clone());
                }
                _ => {
                    return Err(self.error(&["WHERE", "GROUP", "ORDER", "LIMIT", "TO", "end of input"]))
                }
            }
        }
        Ok(query)
    }

    /// `AS name`, where reserved words are accepted as the name.
    fn alias(&mut self) -> Result<Option<String>, UqlError> {
        if !self.eat(TokenKind::As) {
            return Ok(None);
        }
        match self.peek() {
            Some(t) if t.kind == TokenKind::VarName || t.kind.is_reserved() => {
                self.advance();
                Ok(Some(t.lexeme.clone()))
            }
            _ => Err(self.error(&["VAR_NAME"])),
        }
    }

    fn integer(&self, t: &Token) -> Result<i64, UqlError> {
        t.lexeme.parse().map_err(|_| UqlError::Syntax {
            span: t.span,
            expected: vec!["INTEGER within 64 bits".into()],
            found: t.lexeme.clone(),
        })
    }

    fn select_literal(&mut self) -> Result<SelectItem, UqlError> {
        let Some(tok) = self.peek() else {
            return Err(self.error(&["ALL", "VAR_NAME", "NL_LITERAL", "COUNT", "AVG", "SUM", "INTEGER"]));
        };
        match tok.kind {
            TokenKind::All => {
                self.advance();
                Ok(SelectItem::All)
            }
            TokenKind::VarName => {
                self.advance();
                Ok(SelectItem::Column {
                    name: tok.lexeme.clone(),
                    alias: self.alias()?,
                })
            }
            TokenKind::NlLiteral => {
                self.advance();
                Ok(SelectItem::Semantic {
                    text: tok.unescaped(),
                    alias: self.alias()?,
                })
            }
            TokenKind::Integer => {
                self.advance();
                Ok(SelectItem::Integer(self.integer(tok)?))
            }
            TokenKind::Count | TokenKind::Avg | TokenKind::Sum => {
                self.advance();
                let op = match tok.kind {
                    TokenKind::Count => AggOp::Count,
                    TokenKind::Avg => AggOp::Avg,
                    _ => AggOp::Sum,
                };
                self.expect(TokenKind::LeftParenthesis)?;
                let arg = match self.peek_kind() {
                    Some(TokenKind::All) => {
                        self.advance();
                        AggArg::All
                    }
                    Some(TokenKind::VarName) => AggArg::Column(self.advance().lexeme.clone()),
                    _ => return Err(self.error(&["ALL", "VAR_NAME"])),
                };
                self.expect(TokenKind::RightParenthesis)?;
                Ok(SelectItem::Aggregate {
                    op,
                    arg,
                    alias: self.alias()?,
                })
            }
            _ => Err(self.error(&["ALL", "VAR_NAME", "NL_LITERAL", "COUNT", "AVG", "SUM", "INTEGER"])),
        }
    }

    fn predicate(&mut self) -> Result<Predicate, UqlError> {
        match self.peek_kind() {
            Some(TokenKind::NlLiteral) => Ok(Predicate::Semantic(self.advance().unescaped())),
            Some(TokenKind::VarName) => {
                let column = self.advance().lexeme.clone();
                let op_tok = self.expect(TokenKind::CompareOperator)?;
                let op = CompareOp::parse(&op_tok.lexeme).expect("lexer only emits known operators");
                let value = match self.peek_kind() {
                    Some(TokenKind::NlLiteral) => Literal::Text(self.advance().unescaped()),
                    Some(TokenKind::Integer) => {
                        let t = self.advance();
                        Literal::Integer(self.integer(t)?)
                    }
                    Some(TokenKind::Float) => {
                        let t = self.advance();
                        Literal::Float(t.lexeme.parse().map_err(|_| UqlError::Syntax {
                            span: t.span,
                            expected: vec!["FLOAT".into()],
                            found: t.lexeme.clone(),
                        })?)
                    }
                    _ => return Err(self.error(&["NL_LITERAL", "INTEGER", "FLOAT"])),
                };
                Ok(Predicate::Compare { column, op, value })
            }
            _ => Err(self.error(&["NL_LITERAL", "VAR_NAME"])),
        }
    }

    fn where_expression(&mut self) -> Result<WhereClause, UqlError> {
        let first = self.predicate()?;
        let mut rest = Vec::new();
        loop {
            let op = match self.peek_kind() {
                Some(TokenKind::And) => BoolOp::And,
                Some(TokenKind::Or) => BoolOp::Or,
                _ => break,
            };
            self.advance();
            rest.push((op, self.predicate()?));
        }
        WhereClause::new(first, rest)
    }

    fn group_by_expression(&mut self) -> Result<Vec<GroupKey>, UqlError> {
        let mut keys = vec![self.group_by_literal()?];
        while self.eat(TokenKind::Separator) {
            keys.push(self.group_by_literal()?);
        }
        Ok(keys)
    }

    fn group_by_literal(&mut self) -> Result<GroupKey, UqlError> {
        let expr = match self.peek_kind() {
            Some(TokenKind::VarName) => GroupExpr::Column(self.advance().lexeme.clone()),
            Some(TokenKind::NlLiteral) => GroupExpr::Semantic(self.advance().unescaped()),
            _ => return Err(self.error(&["VAR_NAME", "NL_LITERAL"])),
        };
        Ok(GroupKey {
            expr,
            alias: self.alias()?,
        })
    }

    fn order_by_expression(&mut self) -> Result<OrderBy, UqlError> {
        let mut keys = vec![self.order_by_literal()?];
        while self.eat(TokenKind::Separator) {
            keys.push(self.order_by_literal()?);
        }
        let descending = self.eat(TokenKind::Desc);
        Ok(OrderBy { keys, descending })
    }

    fn order_by_literal(&mut self) -> Result<OrderKey, UqlError> {
        match self.peek_kind() {
            Some(TokenKind::VarName) => Ok(OrderKey::Column(self.advance().lexeme.clone())),
            // aggregate keywords name an output alias such as `count`
            Some(TokenKind::Count | TokenKind::Avg | TokenKind::Sum) => {
                Ok(OrderKey::Column(self.advance().lexeme.clone()))
            }
            Some(TokenKind::NlLiteral) => Ok(OrderKey::Semantic(self.advance().unescaped())),
            Some(TokenKind::Integer) => {
                let t = self.advance();
                Ok(OrderKey::Integer(self.integer(t)?))
            }
            _ => Err(self.error(&["VAR_NAME", "NL_LITERAL", "INTEGER"])),
        }
    }
}

fn check_aliases(query: &Query) -> Result<(), UqlError> {
    let mut seen = HashSet::new();
    let select = query.select.iter().filter_map(|s| s.alias());
    let group = query
        .group_by
        .iter()
        .flatten()
        .filter_map(|k| k.alias.as_deref());
    for alias in select.chain(group) {
        if !seen.insert(alias.to_ascii_lowercase()) {
            return Err(UqlError::DuplicateAlias(alias.to_string()));
        }
    }
    Ok(())
}
