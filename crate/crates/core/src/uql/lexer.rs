use super::token::{Span, Token, TokenKind};
use super::UqlError;

/// Split UQL source into tokens by greedy longest match.
pub fn tokenize(source: &str) -> Result<Vec<Token>, UqlError> {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let c = bytes[pos];
        if c.is_ascii_whitespace() {
            pos += 1;
            continue;
        }
        if c == b'"' {
            let len = match_nl_literal(&bytes[pos..]).ok_or(UqlError::Lex {
                offset: pos,
                message: "unterminated natural-language literal".into(),
            })?;
            tokens.push(token(source, TokenKind::NlLiteral, pos, len));
            pos += len;
            continue;
        }

        let rest = &bytes[pos..];
        let candidates = [
            (TokenKind::CompareOperator, match_compare(rest)),
            (TokenKind::Integer, match_integer(rest)),
            (TokenKind::Float, match_float(rest)),
            (TokenKind::VarName, match_var_name(rest)),
            (TokenKind::Separator, (c == b',').then_some(1)),
            (TokenKind::All, (c == b'*').then_some(1)),
            (TokenKind::LeftParenthesis, (c == b'(').then_some(1)),
            (TokenKind::RightParenthesis, (c == b')').then_some(1)),
        ];
        // strictly-longer wins, so earlier entries keep ties
        let mut best: Option<(TokenKind, usize)> = None;
        for (kind, len) in candidates {
            if let Some(len) = len {
                if best.is_none_or(|(_, b)| len > b) {
                    best = Some((kind, len));
                }
            }
        }
        let Some((mut kind, len)) = best else {
            let found = source[pos..].chars().next().unwrap_or('?');
            return Err(UqlError::Lex {
                offset: pos,
                message: format!("unexpected character `{found}`"),
            });
        };
        if kind == TokenKind::VarName {
            if let Some(reserved) = TokenKind::reserved(&source[pos..pos + len]) {
                kind = reserved;
            }
        }
        tokens.push(token(source, kind, pos, len));
        pos += len;
    }
    Ok(tokens)
}

fn token(source: &str, kind: TokenKind, start: usize, len: usize) -> Token {
    Token {
        kind,
        lexeme: source[start..start + len].to_string(),
        span: Span::new(start, start + len),
    }
}

// "((?:\\.|[^"\\])*)"
fn match_nl_literal(s: &[u8]) -> Option<usize> {
    let mut i = 1;
    while i < s.len() {
        match s[i] {
            b'\\' => {
                if i + 1 >= s.len() {
                    return None;
                }
                i += 2;
            }
            b'"' => return Some(i + 1),
            _ => i += 1,
        }
    }
    None
}

// (<>|>=|<=|!=|>|<|=)
fn match_compare(s: &[u8]) -> Option<usize> {
    match s {
        [b'<', b'>', ..] | [b'>', b'=', ..] | [b'<', b'=', ..] | [b'!', b'=', ..] => Some(2),
        [b'>' | b'<' | b'=', ..] => Some(1),
        _ => None,
    }
}

fn digits(s: &[u8]) -> usize {
    s.iter().take_while(|b| b.is_ascii_digit()).count()
}

// [-]?\d+
fn match_integer(s: &[u8]) -> Option<usize> {
    let sign = usize::from(s.first() == Some(&b'-'));
    let d = digits(&s[sign..]);
    (d > 0).then_some(sign + d)
}

// [+-]?[0-9]*\.[0-9]+
fn match_float(s: &[u8]) -> Option<usize> {
    let sign = usize::from(matches!(s.first(), Some(b'+' | b'-')));
    let whole = digits(&s[sign..]);
    let dot = sign + whole;
    if s.get(dot) != Some(&b'.') {
        return None;
    }
    let frac = digits(&s[dot + 1..]);
    (frac > 0).then_some(dot + 1 + frac)
}

// [a-zA-Z_][a-zA-Z_0-9]*(\.[a-zA-Z_][a-zA-Z_0-9]*)*
fn match_var_name(s: &[u8]) -> Option<usize> {
    fn ident(s: &[u8]) -> usize {
        match s.first() {
            Some(c) if c.is_ascii_alphabetic() || *c == b'_' => {
                1 + s[1..]
                    .iter()
                    .take_while(|c| c.is_ascii_alphanumeric() || **c == b'_')
                    .count()
            }
            _ => 0,
        }
    }
    let mut len = ident(s);
    if len == 0 {
        return None;
    }
    while s.get(len) == Some(&b'.') {
        let next = ident(&s[len + 1..]);
        if next == 0 {
            break;
        }
        len += 1 + next;
    }
    Some(len)
}
