use std::fmt;

use crate::scalar::TxnScalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxnKind {
    Scheduling,
    Shaping,
}

impl fmt::Display for TxnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TxnKind::Scheduling => "scheduling",
            TxnKind::Shaping => "shaping",
        })
    }
}

/// Exact decimal literal, `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decimal {
    pub num: i64,
    pub den: i64,
}

impl Decimal {
    pub const fn int(v: i64) -> Self {
        Self { num: v, den: 1 }
    }

    pub fn to_scalar<V: TxnScalar>(self) -> Option<V> {
        V::from_ratio(self.num, self.den)
    }

    pub fn parse(s: &str) -> Option<Self> {
        crate::scalar::parse_decimal(s).map(|(num, den)| Self { num, den })
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            return write!(f, "{}", self.num);
        }
        let digits = self.den.ilog10() as usize;
        let sign = if self.num < 0 { "-" } else { "" };
        let mag = self.num.unsigned_abs();
        let den = self.den as u64;
        write!(f, "{sign}{}.{:0width$}", mag / den, mag % den, width = digits)
    }
}

/// Initial value of a state variable: a literal or the value of a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Literal(Decimal),
    Param(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamDecl {
    pub name: String,
    pub value: Decimal,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateDecl {
    pub name: String,
    pub init: Init,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Min,
    Max,
    Floor,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Lit(Decimal),
    Now,
    Param(usize),
    Scalar(usize),
    /// `m[f]`; absent keys read the map's default.
    MapGet(usize),
    /// `f in m`
    MapHas(usize),
    /// `p.x`, by index into [`Program::fields`].
    Field(usize),
    /// `f.weight`
    FlowWeight,
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LValue {
    Scalar(usize),
    Map(usize),
    Field(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Stmt {
    Assign(LValue, Expr),
    If(Expr, Vec<Stmt>, Vec<Stmt>),
}

/// A parsed and resolved transaction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub name: String,
    pub kind: TxnKind,
    pub params: Vec<ParamDecl>,
    pub scalars: Vec<StateDecl>,
    pub maps: Vec<StateDecl>,
    /// Assignments to scalar state run when an element this transaction
    /// ranked is dequeued.
    pub on_dequeue: Vec<(usize, Expr)>,
    pub body: Vec<Stmt>,
    /// Packet fields referenced by the program.
    pub fields: Vec<String>,
    pub(crate) rank_field: usize,
    pub source: String,
}

impl Program {
    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn scalar_index(&self, name: &str) -> Option<usize> {
        self.scalars.iter().position(|p| p.name == name)
    }

    pub fn map_index(&self, name: &str) -> Option<usize> {
        self.maps.iter().position(|p| p.name == name)
    }

    pub fn has_dequeue_hook(&self) -> bool {
        !self.on_dequeue.is_empty()
    }

    pub fn param(&self, name: &str) -> Option<Decimal> {
        self.param_index(name).map(|i| self.params[i].value)
    }
}

/// A boolean expression over packet fields, used as a node predicate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Predicate {
    pub expr: Expr,
    pub fields: Vec<String>,
    pub source: String,
}

impl Predicate {
    pub fn always() -> Self {
        Self {
            expr: Expr::Lit(Decimal::int(1)),
            fields: Vec::new(),
            source: "true".to_string(),
        }
    }
}
