use std::collections::HashMap;

use super::ast::*;
use super::TxnError;
use crate::packet::PacketRecord;
use crate::scalar::TxnScalar;

/// Key of flow-indexed state. For a leaf node this is the packet's flow id;
/// above the leaves it identifies the child the element came from.
pub type FlowKey = u64;

/// Mutable state of one transaction instance.
#[derive(Clone, Debug, PartialEq)]
pub struct TxnState<V> {
    params: Vec<V>,
    scalars: Vec<V>,
    maps: Vec<HashMap<FlowKey, V>>,
    map_defaults: Vec<V>,
    names: Names,
}

#[derive(Clone, Debug, PartialEq)]
struct Names {
    scalars: Vec<String>,
    maps: Vec<String>,
}

impl<V: TxnScalar> TxnState<V> {
    /// Fresh state initialized from the program's declarations.
    pub fn new(prog: &Program) -> Result<Self, TxnError> {
        let params = prog
            .params
            .iter()
            .map(|p| {
                p.value
                    .to_scalar()
                    .ok_or_else(|| TxnError::Arithmetic(format!("param {} out of range", p.name)))
            })
            .collect::<Result<Vec<V>, _>>()?;
        let init = |d: &StateDecl| -> Result<V, TxnError> {
            match d.init {
                Init::Param(i) => Ok(params[i]),
                Init::Literal(l) => l
                    .to_scalar()
                    .ok_or_else(|| TxnError::Arithmetic(format!("{} out of range", d.name))),
            }
        };
        let scalars = prog.scalars.iter().map(init).collect::<Result<_, _>>()?;
        let map_defaults = prog.maps.iter().map(init).collect::<Result<_, _>>()?;
        Ok(Self {
            scalars,
            maps: vec![HashMap::new(); prog.maps.len()],
            map_defaults,
            names: Names {
                scalars: prog.scalars.iter().map(|d| d.name.clone()).collect(),
                maps: prog.maps.iter().map(|d| d.name.clone()).collect(),
            },
            params,
        })
    }

    pub fn scalar(&self, name: &str) -> Option<V> {
        let i = self.names.scalars.iter().position(|n| n == name)?;
        Some(self.scalars[i])
    }

    pub fn set_scalar(&mut self, name: &str, v: V) -> bool {
        match self.names.scalars.iter().position(|n| n == name) {
            Some(i) => {
                self.scalars[i] = v;
                true
            }
            None => false,
        }
    }

    /// Stored value for `key`, or `None` if the key was never written.
    pub fn map_entry(&self, name: &str, key: FlowKey) -> Option<V> {
        let i = self.names.maps.iter().position(|n| n == name)?;
        self.maps[i].get(&key).copied()
    }

    pub fn set_map_entry(&mut self, name: &str, key: FlowKey, v: V) -> bool {
        match self.names.maps.iter().position(|n| n == name) {
            Some(i) => {
                self.maps[i].insert(key, v);
                true
            }
            None => false,
        }
    }

    pub fn map_len(&self, name: &str) -> Option<usize> {
        let i = self.names.maps.iter().position(|n| n == name)?;
        Some(self.maps[i].len())
    }
}

/// Per-execution inputs besides state and packet.
#[derive(Clone, Copy, Debug)]
pub struct ExecCtx<V> {
    pub now: u64,
    pub flow: FlowKey,
    pub weight: V,
}

impl<V: TxnScalar> ExecCtx<V> {
    pub fn new(now: u64, flow: FlowKey) -> Self {
        Self {
            now,
            flow,
            weight: V::one(),
        }
    }

    pub fn with_weight(mut self, weight: V) -> Self {
        self.weight = weight;
        self
    }
}

/// Result of a successful execution.
#[derive(Clone, Debug, PartialEq)]
pub struct Execution<V> {
    /// Integer rank: floor of `p.rank` for scheduling transactions, ceiling
    /// for shaping transactions (a release never happens early). Negative
    /// values saturate to 0.
    pub rank: u64,
    pub rank_value: V,
    /// Values of the program's packet fields after execution, indexed like
    /// [`Program::fields`]. Kept for dequeue hooks.
    pub fields: Vec<Option<V>>,
}

#[derive(Clone, Debug)]
enum Undo<V> {
    Scalar(usize, V),
    Map(usize, FlowKey, Option<V>),
}

/// State changes made by one execution, in order; see
/// [`TxnState::rollback`].
#[derive(Clone, Debug, Default)]
pub struct UndoLog<V>(Vec<Undo<V>>);

impl<V: TxnScalar> TxnState<V> {
    /// Revert the changes recorded in `log`. Logs from several executions
    /// must be rolled back newest first.
    pub fn rollback(&mut self, log: UndoLog<V>) {
        for u in log.0.into_iter().rev() {
            self.apply_undo(u);
        }
    }

    fn apply_undo(&mut self, u: Undo<V>) {
        match u {
            Undo::Scalar(i, v) => self.scalars[i] = v,
            Undo::Map(i, k, Some(v)) => {
                self.maps[i].insert(k, v);
            }
            Undo::Map(i, k, None) => {
                self.maps[i].remove(&k);
            }
        }
    }
}

struct Frame<'a, V> {
    field_names: &'a [String],
    state: &'a mut TxnState<V>,
    pkt: &'a PacketRecord,
    ctx: ExecCtx<V>,
    view: Vec<Option<V>>,
    dirty: Vec<bool>,
    undo: Vec<Undo<V>>,
}

fn arith<V>(v: Option<V>, what: &str) -> Result<V, TxnError> {
    v.ok_or_else(|| TxnError::Arithmetic(what.to_string()))
}

impl<V: TxnScalar> Frame<'_, V> {
    fn field(&mut self, i: usize) -> Result<V, TxnError> {
        if let Some(v) = self.view[i] {
            return Ok(v);
        }
        let name = &self.field_names[i];
        let raw = self
            .pkt
            .get(name)
            .ok_or_else(|| TxnError::MissingField(name.clone()))?;
        let v = arith(V::from_i64(raw), "packet field out of range")?;
        self.view[i] = Some(v);
        Ok(v)
    }

    fn eval(&mut self, e: &Expr) -> Result<V, TxnError> {
        Ok(match e {
            Expr::Lit(d) => arith(d.to_scalar(), "literal out of range")?,
            Expr::Now => arith(V::from_i64(self.ctx.now as i64), "now out of range")?,
            Expr::Param(i) => self.state.params[*i],
            Expr::Scalar(i) => self.state.scalars[*i],
            Expr::MapGet(i) => self.state.maps[*i]
                .get(&self.ctx.flow)
                .copied()
                .unwrap_or(self.state.map_defaults[*i]),
            Expr::MapHas(i) => V::from_bool(self.state.maps[*i].contains_key(&self.ctx.flow)),
            Expr::Field(i) => self.field(*i)?,
            Expr::FlowWeight => self.ctx.weight,
            Expr::Unary(UnOp::Neg, a) => {
                let a = self.eval(a)?;
                arith(a.checked_neg(), "overflow")?
            }
            Expr::Unary(UnOp::Not, a) => V::from_bool(!self.eval(a)?.is_truthy()),
            Expr::Binary(BinOp::And, a, b) => {
                V::from_bool(self.eval(a)?.is_truthy() && self.eval(b)?.is_truthy())
            }
            Expr::Binary(BinOp::Or, a, b) => {
                V::from_bool(self.eval(a)?.is_truthy() || self.eval(b)?.is_truthy())
            }
            Expr::Binary(op, a, b) => {
                let (a, b) = (self.eval(a)?, self.eval(b)?);
                match op {
                    BinOp::Add => arith(a.checked_add(&b), "overflow")?,
                    BinOp::Sub => arith(a.checked_sub(&b), "overflow")?,
                    BinOp::Mul => arith(a.checked_mul(&b), "overflow")?,
                    BinOp::Div => {
                        if b.is_zero() {
                            return Err(TxnError::Arithmetic("division by zero".into()));
                        }
                        arith(a.checked_div(&b), "overflow")?
                    }
                    BinOp::Eq => V::from_bool(a == b),
                    BinOp::Ne => V::from_bool(a != b),
                    BinOp::Lt => V::from_bool(a < b),
                    BinOp::Le => V::from_bool(a <= b),
                    BinOp::Gt => V::from_bool(a > b),
                    BinOp::Ge => V::from_bool(a >= b),
                    BinOp::And | BinOp::Or => unreachable!(),
                }
            }
            Expr::Call(func, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a)?);
                }
                match func {
                    Func::Min => vals.into_iter().min().unwrap(),
                    Func::Max => vals.into_iter().max().unwrap(),
                    Func::Floor => vals[0].floor(),
                }
            }
        })
    }

    fn exec(&mut self, stmts: &[Stmt]) -> Result<(), TxnError> {
        for s in stmts {
            match s {
                Stmt::Assign(lv, e) => {
                    let v = self.eval(e)?;
                    match *lv {
                        LValue::Scalar(i) => {
                            let old = std::mem::replace(&mut self.state.scalars[i], v);
                            self.undo.push(Undo::Scalar(i, old));
                        }
                        LValue::Map(i) => {
                            let old = self.state.maps[i].insert(self.ctx.flow, v);
                            self.undo.push(Undo::Map(i, self.ctx.flow, old));
                        }
                        LValue::Field(i) => {
                            self.view[i] = Some(v);
                            self.dirty[i] = true;
                        }
                    }
                }
                Stmt::If(c, t, e) => {
                    if self.eval(c)?.is_truthy() {
                        self.exec(t)?;
                    } else {
                        self.exec(e)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn rollback(&mut self) {
        while let Some(u) = self.undo.pop() {
            self.state.apply_undo(u);
        }
    }
}

impl Program {
    /// Run the transaction for one packet.
    ///
    /// Either the whole transaction takes effect or, on error, neither the
    /// state nor the packet is modified. Written packet fields are stored
    /// back as their integer floor.
    pub fn execute<V: TxnScalar>(
        &self,
        state: &mut TxnState<V>,
        pkt: &mut PacketRecord,
        ctx: ExecCtx<V>,
    ) -> Result<Execution<V>, TxnError> {
        self.execute_logged(state, pkt, ctx).map(|(e, _)| e)
    }

    /// Like [`Program::execute`], also returning the state changes so a
    /// caller can undo a successful execution later.
    pub fn execute_logged<V: TxnScalar>(
        &self,
        state: &mut TxnState<V>,
        pkt: &mut PacketRecord,
        ctx: ExecCtx<V>,
    ) -> Result<(Execution<V>, UndoLog<V>), TxnError> {
        let n = self.fields.len();
        let mut frame = Frame {
            field_names: &self.fields,
            state,
            pkt,
            ctx,
            view: vec![None; n],
            dirty: vec![false; n],
            undo: Vec::new(),
        };
        if let Err(e) = frame.exec(&self.body) {
            frame.rollback();
            return Err(e);
        }
        let rank_value = frame.view[self.rank_field].expect("rank assigned on every path");
        let rank = match self.kind {
            TxnKind::Scheduling => rank_value.to_rank_floor(),
            TxnKind::Shaping => rank_value.to_rank_ceil(),
        };
        let Frame {
            view, dirty, undo, ..
        } = frame;
        for (i, d) in dirty.iter().enumerate() {
            if *d {
                pkt.set(&self.fields[i], view[i].unwrap().floor_i64());
            }
        }
        pkt.rank_out = Some(rank);
        Ok((
            Execution {
                rank,
                rank_value,
                fields: view,
            },
            UndoLog(undo),
        ))
    }

    /// Run the `on_dequeue` assignments for an element this program ranked.
    /// `fields` is the snapshot returned by [`Program::execute`].
    pub fn run_dequeue_hook<V: TxnScalar>(
        &self,
        state: &mut TxnState<V>,
        fields: &[Option<V>],
        ctx: ExecCtx<V>,
    ) -> Result<(), TxnError> {
        if self.on_dequeue.is_empty() {
            return Ok(());
        }
        // The hook sees the packet exactly as the transaction left it.
        let empty = PacketRecord::new(0, 0, 0, 0);
        let mut frame = Frame {
            field_names: &self.fields,
            state,
            pkt: &empty,
            ctx,
            view: fields.to_vec(),
            dirty: vec![false; fields.len()],
            undo: Vec::new(),
        };
        for (target, e) in &self.on_dequeue {
            match frame.eval(e) {
                Ok(v) => {
                    let old = std::mem::replace(&mut frame.state.scalars[*target], v);
                    frame.undo.push(Undo::Scalar(*target, old));
                }
                Err(err) => {
                    frame.rollback();
                    return Err(err);
                }
            }
        }
        Ok(())
    }
}

impl Predicate {
    pub fn matches<V: TxnScalar>(&self, pkt: &PacketRecord) -> Result<bool, TxnError> {
        let mut state = TxnState::<V> {
            params: Vec::new(),
            scalars: Vec::new(),
            maps: Vec::new(),
            map_defaults: Vec::new(),
            names: Names {
                scalars: Vec::new(),
                maps: Vec::new(),
            },
        };
        let mut frame = Frame {
            field_names: &self.fields,
            state: &mut state,
            pkt,
            ctx: ExecCtx::new(0, 0),
            view: vec![None; self.fields.len()],
            dirty: Vec::new(),
            undo: Vec::new(),
        };
        Ok(frame.eval(&self.expr)?.is_truthy())
    }
}
