use std::fmt;

/// Byte offsets `[start, end)` into the query source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Select,
    From,
    Where,
    As,
    Limit,
    Group,
    Order,
    By,
    To,
    And,
    Or,
    Count,
    Avg,
    Sum,
    Desc,
    Separator,
    All,
    NlLiteral,
    VarName,
    CompareOperator,
    Integer,
    Float,
    LeftParenthesis,
    RightParenthesis,
}

impl TokenKind {
    /// Reserved-word lookup on the lowercased identifier.
    pub fn reserved(word: &str) -> Option<TokenKind> {
        Some(match word.to_ascii_lowercase().as_str() {
            "select" => TokenKind::Select,
            "from" => TokenKind::From,
            "where" => TokenKind::Where,
            "as" => TokenKind::As,
            "limit" => TokenKind::Limit,
            "group" => TokenKind::Group,
            "order" => TokenKind::Order,
            "by" => TokenKind::By,
            "to" => TokenKind::To,
            "and" => TokenKind::And,
            "or" => TokenKind::Or,
            "count" => TokenKind::Count,
            "avg" => TokenKind::Avg,
            "sum" => TokenKind::Sum,
            "desc" => TokenKind::Desc,
            _ => return None,
        })
    }

    pub fn is_reserved(self) -> bool {
        !matches!(
            self,
            TokenKind::Separator
                | TokenKind::All
                | TokenKind::NlLiteral
                | TokenKind::VarName
                | TokenKind::CompareOperator
                | TokenKind::Integer
                | TokenKind::Float
                | TokenKind::LeftParenthesis
                | TokenKind::RightParenthesis
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            TokenKind::Select => "SELECT",
            TokenKind::From => "FROM",
            TokenKind::Where => "WHERE",
            TokenKind::As => "AS",
            TokenKind::Limit => "LIMIT",
            TokenKind::Group => "GROUP",
            TokenKind::Order => "ORDER",
            TokenKind::By => "BY",
            TokenKind::To => "TO",
            TokenKind::And => "AND",
            TokenKind::Or => "OR",
            TokenKind::Count => "COUNT",
            TokenKind::Avg => "AVG",
            TokenKind::Sum => "SUM",
            TokenKind::Desc => "DESC",
            TokenKind::Separator => "SEPARATOR",
            TokenKind::All => "ALL",
            TokenKind::NlLiteral => "NL_LITERAL",
            TokenKind::VarName => "VAR_NAME",
            TokenKind::CompareOperator => "COMPARE_OPERATOR",
            TokenKind::Integer => "INTEGER",
            TokenKind::Float => "FLOAT",
            TokenKind::LeftParenthesis => "LEFT_PARENTHESIS",
            TokenKind::RightParenthesis => "RIGHT_PARENTHESIS",
        }
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    /// Source text of the token, quotes included for NL literals.
    pub lexeme: String,
    pub span: Span,
}

impl Token {
    /// Content of an NL literal with the quotes stripped and backslash
    /// escapes resolved (`\x` becomes `x`).
    pub fn unescaped(&self) -> String {
        unescape(&self.lexeme[1..self.lexeme.len() - 1])
    }
}

pub(crate) fn unescape(body: &str) -> String {
    let mut out = String::with_capacity(body.len());
    let mut chars = body.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            if let Some(next) = chars.next() {
                out.push(next);
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Quote `text` as an NL literal, escaping quotes and backslashes.
pub fn quote(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push('"');
    for c in text.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}
