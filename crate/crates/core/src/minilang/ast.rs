use std::fmt;

use serde::Serialize;

/// Half-open byte range into the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Span {
        Span { start, end }
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Gt,
    Eq,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Lt => "<",
            BinOp::Gt => ">",
            BinOp::Eq => "==",
        }
    }

    /// Binding strength; all operators are left-associative.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Eq => 1,
            BinOp::Lt | BinOp::Gt => 2,
            BinOp::Add | BinOp::Sub => 3,
            BinOp::Mul | BinOp::Div => 4,
        }
    }
}

/// Children by kind:
/// `Program`: items; `FuncDecl`: params then the body block; `Block`:
/// statements; `If`: condition, then-block, optional else-block; `While`:
/// condition, body; `Return`: optional value; `Assign`: value; `BinOp`: two
/// operands; `Call`: arguments. A bare expression inside a block is an
/// expression statement.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub enum Kind {
    Program,
    FuncDecl(String),
    Param(String),
    Block,
    If,
    While,
    Return,
    Assign(String),
    BinOp(BinOp),
    Call(String),
    Ident(String),
    IntLit(i64),
}

impl Kind {
    pub fn is_expression(&self) -> bool {
        matches!(self, Kind::BinOp(_) | Kind::Call(_) | Kind::Ident(_) | Kind::IntLit(_))
    }

    /// Label with every identifier replaced by `_`.
    pub fn abstract_label(&self) -> String {
        match self {
            Kind::Program => "Program".into(),
            Kind::FuncDecl(_) => "FuncDecl".into(),
            Kind::Param(_) => "Param".into(),
            Kind::Block => "Block".into(),
            Kind::If => "If".into(),
            Kind::While => "While".into(),
            Kind::Return => "Return".into(),
            Kind::Assign(_) => "Assign".into(),
            Kind::BinOp(op) => format!("BinOp{}", op.symbol()),
            Kind::Call(_) => "Call".into(),
            Kind::Ident(_) => "Ident".into(),
            Kind::IntLit(v) => format!("Int{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Node {
    pub kind: Kind,
    pub span: Span,
    pub children: Vec<Node>,
}

impl Node {
    pub fn new(kind: Kind, span: Span, children: Vec<Node>) -> Node {
        Node { kind, span, children }
    }

    /// Leaves have height 1.
    pub fn height(&self) -> usize {
        1 + self.children.iter().map(Node::height).max().unwrap_or(0)
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(Node::size).sum::<usize>()
    }

    /// Equality of kinds and shape, ignoring spans.
    pub fn same_structure(&self, other: &Node) -> bool {
        self.kind == other.kind
            && self.children.len() == other.children.len()
            && self
                .children
                .iter()
                .zip(&other.children)
                .all(|(a, b)| a.same_structure(b))
    }

    /// Pre-order traversal.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Node)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    pub fn spans_nest(&self) -> bool {
        self.children
            .iter()
            .all(|c| self.span.contains(&c.span) && c.spans_nest())
    }
}

/// S-expression with names, e.g. `(FuncDecl f (Param x) (Block ...))`.
impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match &self.kind {
            Kind::FuncDecl(n) => format!("FuncDecl {n}"),
            Kind::Param(n) => format!("Param {n}"),
            Kind::Assign(n) => format!("Assign {n}"),
            Kind::Call(n) => format!("Call {n}"),
            Kind::Ident(n) => format!("Ident {n}"),
            Kind::IntLit(v) => format!("IntLit {v}"),
            Kind::BinOp(op) => format!("BinOp {}", op.symbol()),
            other => other.abstract_label(),
        };
        write!(f, "({label}")?;
        for c in &self.children {
            write!(f, " {c}")?;
        }
        write!(f, ")")
    }
}
