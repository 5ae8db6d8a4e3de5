use super::ast::*;
use super::lexer::{lex, Tok, Token};
use super::{ParseError, SemanticError};

const RESERVED: &[&str] = &[
    "transaction",
    "scheduling",
    "shaping",
    "state",
    "statemap",
    "param",
    "on_dequeue",
    "if",
    "else",
    "now",
    "p",
    "f",
    "in",
    "min",
    "max",
    "floor",
    "true",
    "false",
];

#[derive(Default)]
struct Scope {
    params: Vec<ParamDecl>,
    scalars: Vec<StateDecl>,
    maps: Vec<StateDecl>,
    fields: Vec<String>,
    /// Predicates may only read packet fields and literals.
    predicate_only: bool,
}

impl Scope {
    fn field(&mut self, name: &str) -> usize {
        match self.fields.iter().position(|f| f == name) {
            Some(i) => i,
            None => {
                self.fields.push(name.to_string());
                self.fields.len() - 1
            }
        }
    }

    fn declared(&self, name: &str) -> bool {
        self.params.iter().any(|p| p.name == name)
            || self.scalars.iter().any(|p| p.name == name)
            || self.maps.iter().any(|p| p.name == name)
    }
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    scope: Scope,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn new(src: &str) -> PResult<Self> {
        Ok(Self {
            toks: lex(src)?,
            pos: 0,
            scope: Scope::default(),
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let (line, col) = self.here();
        Err(ParseError::Syntax {
            line,
            col,
            msg: msg.into(),
        })
    }

    fn semantic<T>(&self, err: SemanticError) -> PResult<T> {
        Err(ParseError::Semantic {
            line: self.here().0,
            err,
        })
    }

    fn describe(t: &Tok) -> String {
        match t {
            Tok::Ident(s) => format!("'{s}'"),
            Tok::Num(s) => format!("number {s}"),
            Tok::Sym(s) => format!("'{s}'"),
            Tok::Eof => "end of input".to_string(),
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == s)
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.is_sym(s) {
            self.bump();
            Ok(())
        } else {
            let found = Self::describe(self.peek());
            self.err(format!("expected '{s}', found {found}"))
        }
    }

    fn expect_kw(&mut self, s: &str) -> PResult<()> {
        if self.is_kw(s) {
            self.bump();
            Ok(())
        } else {
            let found = Self::describe(self.peek());
            self.err(format!("expected '{s}', found {found}"))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => self.err(format!(
                "expected identifier, found {}",
                Self::describe(&other)
            )),
        }
    }

    fn new_name(&mut self) -> PResult<String> {
        let name = self.ident()?;
        if RESERVED.contains(&name.as_str()) {
            return self.err(format!("'{name}' is a reserved word"));
        }
        if self.scope.declared(&name) {
            return self.semantic(SemanticError::Duplicate(name));
        }
        Ok(name)
    }

    fn number(&mut self) -> PResult<Decimal> {
        let neg = if self.is_sym("-") {
            self.bump();
            true
        } else {
            false
        };
        match self.peek().clone() {
            Tok::Num(s) => {
                self.bump();
                let d = match Decimal::parse(&s) {
                    Some(d) => d,
                    None => return self.err(format!("number {s} out of range")),
                };
                Ok(if neg {
                    Decimal {
                        num: -d.num,
                        den: d.den,
                    }
                } else {
                    d
                })
            }
            other => self.err(format!("expected number, found {}", Self::describe(&other))),
        }
    }

    fn init(&mut self) -> PResult<Init> {
        if let Tok::Ident(name) = self.peek().clone() {
            self.bump();
            return match self.scope.params.iter().position(|p| p.name == name) {
                Some(i) => Ok(Init::Param(i)),
                None => self.semantic(SemanticError::UndeclaredIdentifier(name)),
            };
        }
        Ok(Init::Literal(self.number()?))
    }

    fn skip_semis(&mut self) {
        while self.is_sym(";") {
            self.bump();
        }
    }

    fn program(&mut self, source: &str) -> PResult<Program> {
        self.expect_kw("transaction")?;
        let name = self.ident()?;
        let kind = match self.ident()?.as_str() {
            "scheduling" => TxnKind::Scheduling,
            "shaping" => TxnKind::Shaping,
            other => return self.err(format!("expected 'scheduling' or 'shaping', found '{other}'")),
        };
        self.expect_sym("{")?;
        let mut on_dequeue = Vec::new();
        loop {
            self.skip_semis();
            if self.is_kw("param") {
                self.bump();
                let name = self.new_name()?;
                self.expect_sym("=")?;
                let value = self.number()?;
                self.scope.params.push(ParamDecl { name, value });
            } else if self.is_kw("state") {
                self.bump();
                let name = self.new_name()?;
                self.expect_sym("=")?;
                let init = self.init()?;
                self.scope.scalars.push(StateDecl { name, init });
            } else if self.is_kw("statemap") {
                self.bump();
                let name = self.new_name()?;
                let init = if self.is_sym("=") {
                    self.bump();
                    self.init()?
                } else {
                    Init::Literal(Decimal::int(0))
                };
                self.scope.maps.push(StateDecl { name, init });
            } else if self.is_kw("on_dequeue") {
                self.bump();
                let target = self.ident()?;
                let Some(idx) = self.scope.scalars.iter().position(|s| s.name == target) else {
                    return self.semantic(SemanticError::UndeclaredIdentifier(target));
                };
                self.expect_sym("=")?;
                let e = self.expr()?;
                self.expect_sym(";")?;
                on_dequeue.push((idx, e));
            } else {
                break;
            }
        }
        let body = self.stmts()?;
        self.expect_sym("}")?;
        if *self.peek() != Tok::Eof {
            let found = Self::describe(self.peek());
            return self.err(format!("unexpected {found} after transaction"));
        }
        let rank_field = self.scope.field("rank");
        let (lo, hi) = rank_assignments(&body, rank_field);
        if lo == 0 {
            return Err(ParseError::Semantic {
                line: self.here().0,
                err: SemanticError::MissingRankAssignment,
            });
        }
        if hi > 1 {
            return Err(ParseError::Semantic {
                line: self.here().0,
                err: SemanticError::MultipleRankAssignment,
            });
        }
        let scope = std::mem::take(&mut self.scope);
        Ok(Program {
            name,
            kind,
            params: scope.params,
            scalars: scope.scalars,
            maps: scope.maps,
            on_dequeue,
            body,
            fields: scope.fields,
            rank_field,
            source: source.to_string(),
        })
    }

    fn stmts(&mut self) -> PResult<Vec<Stmt>> {
        let mut out = Vec::new();
        loop {
            self.skip_semis();
            if self.is_sym("}") || *self.peek() == Tok::Eof {
                return Ok(out);
            }
            out.push(self.stmt()?);
        }
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect_sym("{")?;
        let body = self.stmts()?;
        self.expect_sym("}")?;
        Ok(body)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        if self.is_kw("if") {
            self.bump();
            self.expect_sym("(")?;
            let cond = self.expr()?;
            self.expect_sym(")")?;
            let then = self.block()?;
            let els = if self.is_kw("else") {
                self.bump();
                if self.is_kw("if") {
                    vec![self.stmt()?]
                } else {
                    self.block()?
                }
            } else {
                Vec::new()
            };
            return Ok(Stmt::If(cond, then, els));
        }
        let lv = self.lvalue()?;
        self.expect_sym("=")?;
        let e = self.expr()?;
        self.expect_sym(";")?;
        Ok(Stmt::Assign(lv, e))
    }

    fn lvalue(&mut self) -> PResult<LValue> {
        let name = self.ident()?;
        if name == "p" {
            self.expect_sym(".")?;
            let field = self.ident()?;
            return Ok(LValue::Field(self.scope.field(&field)));
        }
        if self.is_sym("[") {
            self.bump();
            self.expect_kw("f")?;
            self.expect_sym("]")?;
            return match self.scope.maps.iter().position(|m| m.name == name) {
                Some(i) => Ok(LValue::Map(i)),
                None => self.semantic(SemanticError::UndeclaredIdentifier(name)),
            };
        }
        if let Some(i) = self.scope.scalars.iter().position(|s| s.name == name) {
            return Ok(LValue::Scalar(i));
        }
        if self.scope.declared(&name) || RESERVED.contains(&name.as_str()) {
            return self.semantic(SemanticError::ReadOnly(name));
        }
        self.semantic(SemanticError::UndeclaredIdentifier(name))
    }

    fn expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.and_expr()?;
        while self.is_sym("||") {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = Expr::Binary(BinOp::Or, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.cmp_expr()?;
        while self.is_sym("&&") {
            self.bump();
            let rhs = self.cmp_expr()?;
            lhs = Expr::Binary(BinOp::And, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn cmp_expr(&mut self) -> PResult<Expr> {
        let lhs = self.add_expr()?;
        let op = match self.peek() {
            Tok::Sym("==") => BinOp::Eq,
            Tok::Sym("!=") => BinOp::Ne,
            Tok::Sym("<") => BinOp::Lt,
            Tok::Sym("<=") => BinOp::Le,
            Tok::Sym(">") => BinOp::Gt,
            Tok::Sym(">=") => BinOp::Ge,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.add_expr()?;
        Ok(Expr::Binary(op, Box::new(lhs), Box::new(rhs)))
    }

    fn add_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Sym("+") => BinOp::Add,
                Tok::Sym("-") => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.mul_expr()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn mul_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Sym("*") => BinOp::Mul,
                Tok::Sym("/") => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.is_sym("-") {
            self.bump();
            return Ok(Expr::Unary(UnOp::Neg, Box::new(self.unary()?)));
        }
        if self.is_sym("!") {
            self.bump();
            return Ok(Expr::Unary(UnOp::Not, Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Num(_) => Ok(Expr::Lit(self.number()?)),
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                self.ident_expr(name)
            }
            other => self.err(format!(
                "expected expression, found {}",
                Self::describe(&other)
            )),
        }
    }

    fn ident_expr(&mut self, name: String) -> PResult<Expr> {
        match name.as_str() {
            "true" => return Ok(Expr::Lit(Decimal::int(1))),
            "false" => return Ok(Expr::Lit(Decimal::int(0))),
            "p" => {
                self.expect_sym(".")?;
                let field = self.ident()?;
                return Ok(Expr::Field(self.scope.field(&field)));
            }
            _ => {}
        }
        if self.scope.predicate_only {
            return self.semantic(SemanticError::UndeclaredIdentifier(name));
        }
        match name.as_str() {
            "now" => Ok(Expr::Now),
            "f" => {
                if self.is_sym(".") {
                    self.bump();
                    let attr = self.ident()?;
                    if attr != "weight" {
                        return self.semantic(SemanticError::UndeclaredIdentifier(format!(
                            "f.{attr}"
                        )));
                    }
                    return Ok(Expr::FlowWeight);
                }
                self.expect_kw("in")?;
                let map = self.ident()?;
                match self.scope.maps.iter().position(|m| m.name == map) {
                    Some(i) => Ok(Expr::MapHas(i)),
                    None => self.semantic(SemanticError::UndeclaredIdentifier(map)),
                }
            }
            "min" | "max" | "floor" => {
                let func = match name.as_str() {
                    "min" => Func::Min,
                    "max" => Func::Max,
                    _ => Func::Floor,
                };
                self.expect_sym("(")?;
                let mut args = vec![self.expr()?];
                while self.is_sym(",") {
                    self.bump();
                    args.push(self.expr()?);
                }
                self.expect_sym(")")?;
                let arity_ok = match func {
                    Func::Floor => args.len() == 1,
                    _ => args.len() >= 2,
                };
                if !arity_ok {
                    return self.err(format!("wrong number of arguments to {name}"));
                }
                Ok(Expr::Call(func, args))
            }
            _ => {
                if self.is_sym("[") {
                    self.bump();
                    self.expect_kw("f")?;
                    self.expect_sym("]")?;
                    return match self.scope.maps.iter().position(|m| m.name == name) {
                        Some(i) => Ok(Expr::MapGet(i)),
                        None => self.semantic(SemanticError::UndeclaredIdentifier(name)),
                    };
                }
                if let Some(i) = self.scope.scalars.iter().position(|s| s.name == name) {
                    return Ok(Expr::Scalar(i));
                }
                if let Some(i) = self.scope.params.iter().position(|s| s.name == name) {
                    return Ok(Expr::Param(i));
                }
                self.semantic(SemanticError::UndeclaredIdentifier(name))
            }
        }
    }
}

/// Minimum and maximum number of `p.rank` assignments over all paths.
fn rank_assignments(stmts: &[Stmt], rank: usize) -> (u32, u32) {
    stmts.iter().fold((0, 0), |(lo, hi), s| {
        let (a, b) = match s {
            Stmt::Assign(LValue::Field(i), _) if *i == rank => (1, 1),
            Stmt::Assign(..) => (0, 0),
            Stmt::If(_, t, e) => {
                let (tl, th) = rank_assignments(t, rank);
                let (el, eh) = rank_assignments(e, rank);
                (tl.min(el), th.max(eh))
            }
        };
        (lo + a, hi + b)
    })
}

/// Parse a transaction program.
pub fn parse_transaction(source: &str) -> Result<Program, ParseError> {
    let mut p = Parser::new(source)?;
    p.program(source)
}

/// Parse a packet predicate such as `p.flow_id == 0 || p.flow_id == 1`.
pub fn parse_predicate(source: &str) -> Result<Predicate, ParseError> {
    let mut p = Parser::new(source)?;
    p.scope.predicate_only = true;
    let expr = p.expr()?;
    if *p.peek() != Tok::Eof {
        let found = Parser::describe(p.peek());
        return p.err(format!("unexpected {found} in predicate"));
    }
    Ok(Predicate {
        expr,
        fields: p.scope.fields,
        source: source.trim().to_string(),
    })
}
