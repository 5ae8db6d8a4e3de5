//! The transaction language: a small imperative language that computes a
//! packet's rank, run atomically once per packet.
//!
//! ```text
//! transaction stfq scheduling {
//!   state virtual_time = 0
//!   statemap last_finish
//!   on_dequeue virtual_time = p.start;
//!
//!   if (f in last_finish) {
//!     p.start = max(virtual_time, last_finish[f]);
//!   } else {
//!     p.start = virtual_time;
//!   }
//!   last_finish[f] = p.start + p.length / f.weight;
//!   p.rank = p.start;
//! }
//! ```

mod ast;
pub mod builtins;
mod interp;
mod lexer;
mod parser;

use thiserror::Error;

pub use ast::{
    BinOp, Decimal, Expr, Func, Init, LValue, ParamDecl, Predicate, Program, StateDecl, Stmt,
    TxnKind, UnOp,
};
pub use builtins::builtin;
pub use interp::{ExecCtx, Execution, FlowKey, TxnState, UndoLog};
pub use parser::{parse_predicate, parse_transaction};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SemanticError {
    #[error("'{0}' is declared more than once")]
    Duplicate(String),
    #[error("undeclared identifier '{0}'")]
    UndeclaredIdentifier(String),
    #[error("'{0}' is read-only")]
    ReadOnly(String),
    #[error("p.rank is not assigned on every path")]
    MissingRankAssignment,
    #[error("p.rank is assigned more than once on some path")]
    MultipleRankAssignment,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("line {line}: {err}")]
    Semantic { line: usize, err: SemanticError },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::Syntax { line, .. } | ParseError::Semantic { line, .. } => *line,
        }
    }

    pub fn semantic(&self) -> Option<&SemanticError> {
        match self {
            ParseError::Semantic { err, .. } => Some(err),
            ParseError::Syntax { .. } => None,
        }
    }
}

/// Runtime failure; the transaction had no effect.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TxnError {
    #[error("arithmetic error: {0}")]
    Arithmetic(String),
    #[error("packet has no field '{0}'")]
    MissingField(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum TxnLangError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("unknown builtin transaction '{0}'")]
    UnknownBuiltin(String),
    #[error("transaction '{txn}' has no parameter '{param}'")]
    UnknownParam { txn: String, param: String },
}

impl Program {
    /// Copy of the program with some parameter values replaced.
    pub fn with_params<'a, I>(mut self, overrides: I) -> Result<Self, TxnLangError>
    where
        I: IntoIterator<Item = (&'a str, Decimal)>,
    {
        for (name, value) in overrides {
            match self.param_index(name) {
                Some(i) => self.params[i].value = value,
                None => {
                    return Err(TxnLangError::UnknownParam {
                        txn: self.name.clone(),
                        param: name.to_string(),
                    })
                }
            }
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests;
