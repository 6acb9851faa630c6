use super::ast::{BinOp, Kind, Node, Span};
use super::error::ParseError;
use super::lexer::{lex, Token, TokenKind};

/// Nesting limit for blocks and parenthesised expressions.
pub const MAX_DEPTH: usize = 256;

/// `program := (funcdecl | stmt)*`. Top-level statements are accepted so
/// that snippets parse on their own.
pub fn parse(src: &str) -> Result<Node, ParseError> {
    let tokens = lex(src)?;
    let mut p = Parser {
        src,
        tokens,
        pos: 0,
        depth: 0,
    };
    p.program()
}

/// Like [`parse`] for arbitrary bytes; invalid UTF-8 is a located error.
pub fn parse_bytes(bytes: &[u8]) -> Result<Node, ParseError> {
    match std::str::from_utf8(bytes) {
        Ok(src) => parse(src),
        Err(e) => {
            let valid = std::str::from_utf8(&bytes[..e.valid_up_to()]).unwrap_or("");
            Err(ParseError::new(valid, e.valid_up_to(), "invalid UTF-8", vec![], ""))
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    tokens: Vec<Token>,
    pos: usize,
    depth: usize,
}

const PRIMARY: [&str; 3] = ["identifier", "integer", "("];

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if t.kind != TokenKind::Eof {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: &str, expected: &[&str]) -> ParseError {
        let t = self.peek();
        ParseError::new(
            self.src,
            t.span.start,
            message,
            expected.iter().map(|s| s.to_string()).collect(),
            &t.kind.to_string(),
        )
    }

    fn expect(&mut self, kind: TokenKind, what: &str) -> Result<Token, ParseError> {
        if self.peek().kind == kind {
            Ok(self.bump())
        } else {
            Err(self.error(&format!("expected {what}"), &[what]))
        }
    }

    fn ident(&mut self) -> Result<(String, Span), ParseError> {
        match &self.peek().kind {
            TokenKind::Ident(name) => {
                let name = name.clone();
                Ok((name, self.bump().span))
            }
            _ => Err(self.error("expected identifier", &["identifier"])),
        }
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.error("nesting too deep", &[]));
        }
        Ok(())
    }

    fn program(&mut self) -> Result<Node, ParseError> {
        let mut items = Vec::new();
        while self.peek().kind != TokenKind::Eof {
            if self.peek().kind == TokenKind::Fn {
                items.push(self.funcdecl()?);
            } else {
                items.push(self.stmt(&["fn"])?);
            }
        }
        Ok(Node::new(Kind::Program, Span::new(0, self.src.len()), items))
    }

    fn funcdecl(&mut self) -> Result<Node, ParseError> {
        let start = self.bump().span.start;
        let (name, _) = self.ident()?;
        self.expect(TokenKind::LParen, "(")?;
        let mut children = Vec::new();
        if self.peek().kind != TokenKind::RParen {
            loop {
                let (param, span) = self
                    .ident()
                    .map_err(|_| self.error("expected parameter name", &["identifier", ")"]))?;
                children.push(Node::new(Kind::Param(param), span, vec![]));
                if self.peek().kind == TokenKind::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(TokenKind::RParen, ")")?;
        let body = self.block()?;
        let end = body.span.end;
        children.push(body);
        Ok(Node::new(Kind::FuncDecl(name), Span::new(start, end), children))
    }

    fn block(&mut self) -> Result<Node, ParseError> {
        self.enter()?;
        let start = self.expect(TokenKind::LBrace, "{")?.span.start;
        let mut stmts = Vec::new();
        while self.peek().kind != TokenKind::RBrace {
            stmts.push(self.stmt(&["}"])?);
        }
        let end = self.bump().span.end;
        self.depth -= 1;
        Ok(Node::new(Kind::Block, Span::new(start, end), stmts))
    }

    /// `also` lists tokens that may legally appear where a statement fails
    /// to start, for the error's expected set.
    fn stmt(&mut self, also: &[&str]) -> Result<Node, ParseError> {
        let start = self.peek().span.start;
        match self.peek().kind {
            TokenKind::If => {
                self.bump();
                let cond = self.expr()?;
                let then = self.block()?;
                let mut end = then.span.end;
                let mut children = vec![cond, then];
                if self.peek().kind == TokenKind::Else {
                    self.bump();
                    let other = self.block()?;
                    end = other.span.end;
                    children.push(other);
                }
                Ok(Node::new(Kind::If, Span::new(start, end), children))
            }
            TokenKind::While => {
                self.bump();
                let cond = self.expr()?;
                let body = self.block()?;
                let end = body.span.end;
                Ok(Node::new(Kind::While, Span::new(start, end), vec![cond, body]))
            }
            TokenKind::Return => {
                self.bump();
                let mut children = Vec::new();
                if self.peek().kind != TokenKind::Semi {
                    children.push(self.expr()?);
                }
                let end = self.expect(TokenKind::Semi, ";")?.span.end;
                Ok(Node::new(Kind::Return, Span::new(start, end), children))
            }
            TokenKind::Ident(_) | TokenKind::Int(_) | TokenKind::LParen => {
                let e = self.expr()?;
                if self.peek().kind == TokenKind::Assign {
                    let Kind::Ident(name) = e.kind else {
                        return Err(self.error("only a variable can be assigned", &[";"]));
                    };
                    self.bump();
                    let value = self.expr()?;
                    let end = self.expect(TokenKind::Semi, ";")?.span.end;
                    return Ok(Node::new(Kind::Assign(name), Span::new(start, end), vec![value]));
                }
                if self.peek().kind != TokenKind::Semi {
                    return Err(self.error("expected ;", &[";", "=", "operator"]));
                }
                self.bump();
                Ok(e)
            }
            _ => {
                let mut expected = vec!["if", "while", "return", "identifier", "integer", "("];
                expected.extend_from_slice(also);
                Err(self.error("expected statement", &expected))
            }
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        self.binary(1)
    }

    fn binop(&self) -> Option<BinOp> {
        Some(match self.peek().kind {
            TokenKind::Plus => BinOp::Add,
            TokenKind::Minus => BinOp::Sub,
            TokenKind::Star => BinOp::Mul,
            TokenKind::Slash => BinOp::Div,
            TokenKind::Lt => BinOp::Lt,
            TokenKind::Gt => BinOp::Gt,
            TokenKind::EqEq => BinOp::Eq,
            _ => return None,
        })
    }

    /// Precedence climbing; every operator is left-associative.
    fn binary(&mut self, min_prec: u8) -> Result<Node, ParseError> {
        let mut lhs = self.primary()?;
        while let Some(op) = self.binop() {
            if op.precedence() < min_prec {
                break;
            }
            self.bump();
            self.enter()?;
            let rhs = self.binary(op.precedence() + 1)?;
            self.depth -= 1;
            let span = Span::new(lhs.span.start, rhs.span.end);
            lhs = Node::new(Kind::BinOp(op), span, vec![lhs, rhs]);
        }
        Ok(lhs)
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        let tok = self.peek().clone();
        match tok.kind {
            TokenKind::Int(v) => {
                self.bump();
                Ok(Node::new(Kind::IntLit(v), tok.span, vec![]))
            }
            TokenKind::Ident(name) => {
                self.bump();
                if self.peek().kind != TokenKind::LParen {
                    return Ok(Node::new(Kind::Ident(name), tok.span, vec![]));
                }
                self.bump();
                let mut args = Vec::new();
                if self.peek().kind != TokenKind::RParen {
                    loop {
                        self.enter()?;
                        args.push(self.expr()?);
                        self.depth -= 1;
                        if self.peek().kind == TokenKind::Comma {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                }
                let end = self.expect(TokenKind::RParen, ")")?.span.end;
                Ok(Node::new(Kind::Call(name), Span::new(tok.span.start, end), args))
            }
            TokenKind::LParen => {
                self.bump();
                self.enter()?;
                let inner = self.expr()?;
                self.depth -= 1;
                self.expect(TokenKind::RParen, ")")?;
                Ok(inner)
            }
            _ => Err(self.error("expected primary expression", &PRIMARY)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_function() {
        let ast = parse("fn f(x){ return x; }").unwrap();
        assert_eq!(
            ast.to_string(),
            "(Program (FuncDecl f (Param x) (Block (Return (Ident x)))))"
        );
        assert!(ast.spans_nest());
        let f = &ast.children[0];
        assert_eq!(f.span, Span::new(0, 20));
        assert_eq!(f.children[0].span, Span::new(5, 6));
    }

    #[test]
    fn truncated_expression() {
        let err = parse("x = 1 +").unwrap_err();
        assert_eq!(err.message, "expected primary expression");
        assert_eq!(err.offset, 7);
        assert_eq!((err.line, err.column), (1, 8));
        assert_eq!(err.expected, vec!["identifier", "integer", "("]);
        assert_eq!(err.found, "end of input");
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse("1+2*3;").unwrap();
        assert_eq!(
            e.children[0].to_string(),
            "(BinOp + (IntLit 1) (BinOp * (IntLit 2) (IntLit 3)))"
        );
        let e = parse("a-b-c;").unwrap();
        assert_eq!(
            e.children[0].to_string(),
            "(BinOp - (BinOp - (Ident a) (Ident b)) (Ident c))"
        );
        let e = parse("a < b == c > d;").unwrap();
        assert_eq!(
            e.children[0].to_string(),
            "(BinOp == (BinOp < (Ident a) (Ident b)) (BinOp > (Ident c) (Ident d)))"
        );
        let e = parse("(1+2)*3;").unwrap();
        assert_eq!(
            e.children[0].to_string(),
            "(BinOp * (BinOp + (IntLit 1) (IntLit 2)) (IntLit 3))"
        );
    }

    #[test]
    fn statements() {
        let ast = parse("fn g(a, b) { if a < b { a = b; } else { g(a, 1); } while a { a = a - 1; } return; }").unwrap();
        assert_eq!(
            ast.to_string(),
            "(Program (FuncDecl g (Param a) (Param b) (Block \
             (If (BinOp < (Ident a) (Ident b)) (Block (Assign a (Ident b))) (Block (Call g (Ident a) (IntLit 1)))) \
             (While (Ident a) (Block (Assign a (BinOp - (Ident a) (IntLit 1))))) \
             (Return))))"
        );
        assert!(ast.spans_nest());
    }

    #[test]
    fn errors() {
        assert_eq!(parse("fn (x) {}").unwrap_err().offset, 3);
        assert_eq!(parse("fn f(x) { return x }").unwrap_err().offset, 19);
        assert_eq!(parse("1 = 2;").unwrap_err().message, "only a variable can be assigned");
        assert_eq!(parse("}").unwrap_err().message, "expected statement");
        assert!(parse("fn f() { ").is_err());
        assert!(parse("f(1,);").is_err());
        let err = parse("x = 1;\ny = $;").unwrap_err();
        assert_eq!((err.line, err.column, err.offset), (2, 5, 11));
    }

    #[test]
    fn empty_and_deep() {
        assert_eq!(parse("").unwrap().children.len(), 0);
        assert_eq!(
            parse("fn f() {}").unwrap().to_string(),
            "(Program (FuncDecl f (Block)))"
        );
        let deep = format!("{}1{};", "(".repeat(10_000), ")".repeat(10_000));
        assert_eq!(parse(&deep).unwrap_err().message, "nesting too deep");
        let ok = format!("{}1{};", "(".repeat(100), ")".repeat(100));
        assert!(parse(&ok).is_ok());
        let blocks = format!("fn f() {{ {} }}", "if 1 {".repeat(5000) + &"}".repeat(5000));
        assert_eq!(parse(&blocks).unwrap_err().message, "nesting too deep");
    }

    #[test]
    fn invalid_utf8() {
        let err = parse_bytes(b"x = \xff;").unwrap_err();
        assert_eq!(err.offset, 4);
    }
}
