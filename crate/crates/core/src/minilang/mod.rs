//! A small statically scoped language with a recursive-descent parser,
//! canonical printer, subtree multisets and def-use extraction.
//!
//! ```text
//! program  := (funcdecl | stmt)*
//! funcdecl := "fn" ident "(" params? ")" block
//! stmt     := assign | if | while | return | exprstmt
//! assign   := ident "=" expr ";"
//! if       := "if" expr block ("else" block)?
//! while    := "while" expr block
//! return   := "return" expr? ";"
//! exprstmt := expr ";"
//! expr     := binary expressions over == < > + - * / with calls,
//!             identifiers, integer literals and parentheses
//! ```

mod ast;
mod dataflow;
mod error;
mod lexer;
mod parser;
mod printer;
mod subtree;

pub use ast::{BinOp, Kind, Node, Span};
pub use dataflow::{dataflow_match, extract_dataflow, DataflowGraph, Site, SiteKind};
pub use error::ParseError;
pub use lexer::{lex, tokenize_lenient, Token, TokenKind, KEYWORDS};
pub use parser::{parse, parse_bytes, MAX_DEPTH};
pub use printer::{expr as print_expr, print};
pub use subtree::{ast_match, subtree_multiset};
