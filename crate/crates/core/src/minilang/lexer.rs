use std::fmt;

use super::ast::Span;
use super::error::ParseError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Fn,
    If,
    Else,
    While,
    Return,
    Ident(String),
    Int(i64),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Semi,
    Assign,
    Plus,
    Minus,
    Star,
    Slash,
    Lt,
    Gt,
    EqEq,
    Eof,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TokenKind::Fn => "fn",
            TokenKind::If => "if",
            TokenKind::Else => "else",
            TokenKind::While => "while",
            TokenKind::Return => "return",
            TokenKind::Ident(name) => return write!(f, "identifier {name:?}"),
            TokenKind::Int(v) => return write!(f, "integer {v}"),
            TokenKind::LParen => "(",
            TokenKind::RParen => ")",
            TokenKind::LBrace => "{",
            TokenKind::RBrace => "}",
            TokenKind::Comma => ",",
            TokenKind::Semi => ";",
            TokenKind::Assign => "=",
            TokenKind::Plus => "+",
            TokenKind::Minus => "-",
            TokenKind::Star => "*",
            TokenKind::Slash => "/",
            TokenKind::Lt => "<",
            TokenKind::Gt => ">",
            TokenKind::EqEq => "==",
            TokenKind::Eof => "end of input",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
}

pub const KEYWORDS: [&str; 5] = ["fn", "if", "else", "while", "return"];

fn keyword(word: &str) -> Option<TokenKind> {
    Some(match word {
        "fn" => TokenKind::Fn,
        "if" => TokenKind::If,
        "else" => TokenKind::Else,
        "while" => TokenKind::While,
        "return" => TokenKind::Return,
        _ => return None,
    })
}

enum Piece {
    Token(TokenKind),
    /// A character outside the language, or an oversized literal.
    Bad(&'static str),
}

/// Splits `src` into raw pieces; shared by the strict lexer and the lenient
/// tokenizer used for n-gram metrics.
fn scan(src: &str, mut emit: impl FnMut(Piece, Span) -> Result<(), ParseError>) -> Result<(), ParseError> {
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &src[start..i];
            let kind = keyword(word).unwrap_or_else(|| TokenKind::Ident(word.to_string()));
            emit(Piece::Token(kind), Span::new(start, i))?;
            continue;
        }
        if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let piece = match src[start..i].parse::<i64>() {
                Ok(v) => Piece::Token(TokenKind::Int(v)),
                Err(_) => Piece::Bad("integer literal out of range"),
            };
            emit(piece, Span::new(start, i))?;
            continue;
        }
        let (kind, len) = match c {
            b'(' => (TokenKind::LParen, 1),
            b')' => (TokenKind::RParen, 1),
            b'{' => (TokenKind::LBrace, 1),
            b'}' => (TokenKind::RBrace, 1),
            b',' => (TokenKind::Comma, 1),
            b';' => (TokenKind::Semi, 1),
            b'+' => (TokenKind::Plus, 1),
            b'-' => (TokenKind::Minus, 1),
            b'*' => (TokenKind::Star, 1),
            b'/' => (TokenKind::Slash, 1),
            b'<' => (TokenKind::Lt, 1),
            b'>' => (TokenKind::Gt, 1),
            b'=' if bytes.get(i + 1) == Some(&b'=') => (TokenKind::EqEq, 2),
            b'=' => (TokenKind::Assign, 1),
            _ => {
                let width = src[i..].chars().next().map_or(1, char::len_utf8);
                i += width;
                emit(Piece::Bad("unexpected character"), Span::new(start, i))?;
                continue;
            }
        };
        i += len;
        emit(Piece::Token(kind), Span::new(start, i))?;
    }
    Ok(())
}

pub fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    scan(src, |piece, span| match piece {
        Piece::Token(kind) => {
            out.push(Token { kind, span });
            Ok(())
        }
        Piece::Bad(what) => Err(ParseError::new(
            src,
            span.start,
            what,
            vec![],
            &src[span.start..span.end],
        )),
    })?;
    out.push(Token {
        kind: TokenKind::Eof,
        span: Span::new(src.len(), src.len()),
    });
    Ok(out)
}

/// Token texts for n-gram matching. Never fails: characters outside the
/// language become one-character tokens.
pub fn tokenize_lenient(src: &str) -> Vec<String> {
    let mut out = Vec::new();
    let _ = scan(src, |_, span| {
        out.push(src[span.start..span.end].to_string());
        Ok(())
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_and_spans() {
        let toks = lex("fn f(x){ y == 12; }").unwrap();
        let kinds: Vec<&TokenKind> = toks.iter().map(|t| &t.kind).collect();
        assert_eq!(kinds[0], &TokenKind::Fn);
        assert_eq!(kinds[1], &TokenKind::Ident("f".into()));
        assert_eq!(kinds[7], &TokenKind::EqEq);
        assert_eq!(kinds[8], &TokenKind::Int(12));
        assert_eq!(toks[8].span, Span::new(14, 16));
        assert_eq!(toks.last().unwrap().kind, TokenKind::Eof);
        assert_eq!(toks.last().unwrap().span, Span::new(19, 19));
    }

    #[test]
    fn keywords_need_word_boundaries() {
        let toks = lex("iffy return_ fn").unwrap();
        assert_eq!(toks[0].kind, TokenKind::Ident("iffy".into()));
        assert_eq!(toks[1].kind, TokenKind::Ident("return_".into()));
        assert_eq!(toks[2].kind, TokenKind::Fn);
    }

    #[test]
    fn bad_input_is_located() {
        let err = lex("x = 1 $ 2").unwrap_err();
        assert_eq!(err.offset, 6);
        let err = lex("x = 99999999999999999999").unwrap_err();
        assert_eq!(err.offset, 4);
        assert!(err.message.contains("out of range"));
    }

    #[test]
    fn lenient_tokens() {
        assert_eq!(
            tokenize_lenient("if x > 0 : return x"),
            vec!["if", "x", ">", "0", ":", "return", "x"]
        );
        assert_eq!(tokenize_lenient("a==b  \n"), vec!["a", "==", "b"]);
        assert_eq!(tokenize_lenient("é"), vec!["é"]);
    }
}
