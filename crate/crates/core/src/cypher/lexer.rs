//! Tokenizer for the Cypher subset.

use super::error::{ParseError, ParseErrorCode};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    /// Backtick-quoted identifier; never treated as a keyword.
    QuotedIdent(String),
    Str(String),
    Int(i64),
    Float(f64),
    Param(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Dot,
    DotDot,
    Colon,
    Semicolon,
    Pipe,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    Caret,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::QuotedIdent(s) => format!("`{s}`"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Int(i) => i.to_string(),
            Tok::Float(f) => f.to_string(),
            Tok::Param(p) => format!("${p}"),
            Tok::Eof => "end of input".to_string(),
            other => format!("`{}`", punct_text(other)),
        }
    }

    /// True for an unquoted identifier equal to `kw` ignoring ASCII case.
    pub fn is_kw(&self, kw: &str) -> bool {
        matches!(self, Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }
}

fn punct_text(t: &Tok) -> &'static str {
    match t {
        Tok::LParen => "(",
        Tok::RParen => ")",
        Tok::LBracket => "[",
        Tok::RBracket => "]",
        Tok::LBrace => "{",
        Tok::RBrace => "}",
        Tok::Comma => ",",
        Tok::Dot => ".",
        Tok::DotDot => "..",
        Tok::Colon => ":",
        Tok::Semicolon => ";",
        Tok::Pipe => "|",
        Tok::Eq => "=",
        Tok::Ne => "<>",
        Tok::Lt => "<",
        Tok::Le => "<=",
        Tok::Gt => ">",
        Tok::Ge => ">=",
        Tok::Plus => "+",
        Tok::Minus => "-",
        Tok::Star => "*",
        Tok::Slash => "/",
        Tok::Percent => "%",
        Tok::Caret => "^",
        _ => "?",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    /// Byte offsets into the source.
    pub start: usize,
    pub end: usize,
    pub line: usize,
    pub column: usize,
}

/// 1-based line and column (in chars) of a byte offset.
pub fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let mut line = 1;
    let mut col = 1;
    for (i, c) in src.char_indices() {
        if i >= offset {
            break;
        }
        if c == '\n' {
            line += 1;
            col = 1;
        } else {
            col += 1;
        }
    }
    (line, col)
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<(usize, char)> = src.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let byte_at = |i: usize| chars.get(i).map(|c| c.0).unwrap_or(src.len());
    let err = |off: usize, msg: String| {
        let (line, column) = line_col(src, off);
        ParseError::new(ParseErrorCode::Syntax, msg, line, column)
    };

    while i < chars.len() {
        let (start, c) = chars[i];
        let peek = chars.get(i + 1).map(|c| c.1);

        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '/' && peek == Some('/') {
            while i < chars.len() && chars[i].1 != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && peek == Some('*') {
            i += 2;
            loop {
                if i + 1 >= chars.len() {
                    return Err(err(start, "unterminated block comment".into()));
                }
                if chars[i].1 == '*' && chars[i + 1].1 == '/' {
                    i += 2;
                    break;
                }
                i += 1;
            }
            continue;
        }

        let (tok, next) = if c == '"' || c == '\'' {
            let mut s = String::new();
            let mut j = i + 1;
            loop {
                let Some(&(_, d)) = chars.get(j) else {
                    return Err(err(start, "unterminated string literal".into()));
                };
                if d == c {
                    j += 1;
                    break;
                }
                if d == '\\' {
                    let Some(&(_, e)) = chars.get(j + 1) else {
                        return Err(err(start, "unterminated string literal".into()));
                    };
                    s.push(match e {
                        'n' => '\n',
                        't' => '\t',
                        'r' => '\r',
                        other => other,
                    });
                    j += 2;
                    continue;
                }
                s.push(d);
                j += 1;
            }
            (Tok::Str(s), j)
        } else if c == '`' {
            let mut s = String::new();
            let mut j = i + 1;
            loop {
                let Some(&(_, d)) = chars.get(j) else {
                    return Err(err(start, "unterminated quoted identifier".into()));
                };
                j += 1;
                if d == '`' {
                    break;
                }
                s.push(d);
            }
            (Tok::QuotedIdent(s), j)
        } else if c.is_ascii_digit() {
            let mut j = i;
            while j < chars.len() && chars[j].1.is_ascii_digit() {
                j += 1;
            }
            let is_float = chars.get(j).map(|c| c.1) == Some('.')
                && chars.get(j + 1).is_some_and(|c| c.1.is_ascii_digit());
            if is_float {
                j += 1;
                while j < chars.len() && chars[j].1.is_ascii_digit() {
                    j += 1;
                }
                let text = &src[start..byte_at(j)];
                let v: f64 = text
                    .parse()
                    .map_err(|_| err(start, format!("invalid number `{text}`")))?;
                (Tok::Float(v), j)
            } else {
                let text = &src[start..byte_at(j)];
                let v: i64 = text
                    .parse()
                    .map_err(|_| err(start, format!("integer out of range `{text}`")))?;
                (Tok::Int(v), j)
            }
        } else if c.is_alphabetic() || c == '_' {
            let mut j = i;
            while j < chars.len() && (chars[j].1.is_alphanumeric() || chars[j].1 == '_') {
                j += 1;
            }
            (Tok::Ident(src[start..byte_at(j)].to_string()), j)
        } else if c == '$' {
            let mut j = i + 1;
            while j < chars.len() && (chars[j].1.is_alphanumeric() || chars[j].1 == '_') {
                j += 1;
            }
            (Tok::Param(src[byte_at(i + 1)..byte_at(j)].to_string()), j)
        } else {
            let two = |t: Tok| (t, i + 2);
            let one = |t: Tok| (t, i + 1);
            match (c, peek) {
                ('.', Some('.')) => two(Tok::DotDot),
                ('<', Some('>')) => two(Tok::Ne),
                ('!', Some('=')) => two(Tok::Ne),
                ('<', Some('=')) => two(Tok::Le),
                ('>', Some('=')) => two(Tok::Ge),
                ('(', _) => one(Tok::LParen),
                (')', _) => one(Tok::RParen),
                ('[', _) => one(Tok::LBracket),
                (']', _) => one(Tok::RBracket),
                ('{', _) => one(Tok::LBrace),
                ('}', _) => one(Tok::RBrace),
                (',', _) => one(Tok::Comma),
                ('.', _) => one(Tok::Dot),
                (':', _) => one(Tok::Colon),
                (';', _) => one(Tok::Semicolon),
                ('|', _) => one(Tok::Pipe),
                ('=', _) => one(Tok::Eq),
                ('<', _) => one(Tok::Lt),
                ('>', _) => one(Tok::Gt),
                ('+', _) => one(Tok::Plus),
                ('-', _) => one(Tok::Minus),
                // Unicode dashes that LLMs sometimes emit inside arrows.
                ('\u{2013}' | '\u{2014}' | '\u{2212}', _) => one(Tok::Minus),
                ('*', _) => one(Tok::Star),
                ('/', _) => one(Tok::Slash),
                ('%', _) => one(Tok::Percent),
                ('^', _) => one(Tok::Caret),
                _ => return Err(err(start, format!("unexpected character {c:?}"))),
            }
        };
        let (line, column) = line_col(src, start);
        out.push(Token {
            tok,
            start,
            end: byte_at(next),
            line,
            column,
        });
        i = next;
    }
    let (line, column) = line_col(src, src.len());
    out.push(Token {
        tok: Tok::Eof,
        start: src.len(),
        end: src.len(),
        line,
        column,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        tokenize(s).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn range_bounds_do_not_lex_as_floats() {
        assert_eq!(
            toks("*1..4"),
            vec![Tok::Star, Tok::Int(1), Tok::DotDot, Tok::Int(4), Tok::Eof]
        );
        assert_eq!(toks("1.5"), vec![Tok::Float(1.5), Tok::Eof]);
    }

    #[test]
    fn arrows_and_comparisons() {
        assert_eq!(
            toks("<-[]->"),
            vec![
                Tok::Lt,
                Tok::Minus,
                Tok::LBracket,
                Tok::RBracket,
                Tok::Minus,
                Tok::Gt,
                Tok::Eof
            ]
        );
        assert_eq!(toks("a <> b"), toks("a != b"));
    }

    #[test]
    fn strings_comments_and_positions() {
        let t = tokenize("MATCH // note\n  (m {name: 'C\\'O'})").unwrap();
        assert_eq!(t[1].tok, Tok::LParen);
        assert_eq!((t[1].line, t[1].column), (2, 3));
        assert!(t.iter().any(|t| t.tok == Tok::Str("C'O".into())));
    }

    #[test]
    fn unterminated_string_is_a_syntax_error() {
        let e = tokenize("RETURN \"abc").unwrap_err();
        assert_eq!(e.code, ParseErrorCode::Syntax);
        assert_eq!((e.line, e.column), (1, 8));
    }
}
