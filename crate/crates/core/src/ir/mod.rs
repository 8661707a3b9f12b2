//! SSA region-IR.
//!
//! A module is a linear instruction list. Partial vector reads and writes are
//! `rdregion` / `wrregion`; structured SIMD control flow is expressed with
//! `simd_if` / `simd_else` / `simd_end` markers.

pub(crate) mod eval;
mod print;
mod verify;

use std::collections::HashMap;
use std::fmt;

pub use eval::{eval_dispatch, eval_module, EvalError};
pub use verify::{verify, VerifyError};

use crate::memory::AtomicOp;
use crate::region::Region;
use crate::types::{BinOp, CmpRel, ElemType, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(pub u32);

impl fmt::Display for ValueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

/// Element type times flattened length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Ty {
    pub elem: ElemType,
    pub len: u32,
}

impl Ty {
    pub fn new(elem: ElemType, len: u32) -> Ty {
        Ty { elem, len }
    }

    pub fn bytes(&self) -> usize {
        self.elem.size() * self.len as usize
    }
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} x{}", self.elem, self.len)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Param {
    Surface { name: String },
    Scalar { name: String, ty: ElemType },
}

impl Param {
    pub fn name(&self) -> &str {
        match self {
            Param::Surface { name } | Param::Scalar { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Const(Vector),
    /// Scalar kernel argument, by parameter index.
    Arg(u32),
    ThreadX,
    ThreadY,
    Binary(BinOp, ValueId, ValueId),
    /// Produces `uw` 0/1 lanes.
    Cmp(CmpRel, ValueId, ValueId),
    /// Lane-wise `mask != 0 ? a : b`.
    Sel(ValueId, ValueId, ValueId),
    /// Conversion to the result element type.
    Mov(ValueId),
    Any(ValueId),
    All(ValueId),
    RdRegion { src: ValueId, region: Region },
    WrRegion { old: ValueId, new: ValueId, region: Region, pred: Option<ValueId> },
    /// Register-indirect gather: `idx` holds element indices into `src`.
    ISelect { src: ValueId, idx: ValueId },
    MediaRead { surf: u32, x: ValueId, y: ValueId, rows: u32 },
    MediaWrite { surf: u32, x: ValueId, y: ValueId, rows: u32, data: ValueId },
    OwordRead { surf: u32, offset: ValueId },
    OwordWrite { surf: u32, offset: ValueId, data: ValueId },
    ScatterRead { surf: u32, global: ValueId, offsets: ValueId },
    ScatterWrite { surf: u32, global: ValueId, offsets: ValueId, data: ValueId },
    Atomic { op: AtomicOp, surf: u32, offsets: ValueId, src0: Option<ValueId>, src1: Option<ValueId> },
    SimdIf(ValueId),
    SimdElse,
    SimdEnd,
}

impl Op {
    pub fn operands(&self) -> Vec<ValueId> {
        match self {
            Op::Const(_) | Op::Arg(_) | Op::ThreadX | Op::ThreadY | Op::SimdElse | Op::SimdEnd => vec![],
            Op::Binary(_, a, b) | Op::Cmp(_, a, b) => vec![*a, *b],
            Op::Sel(m, a, b) => vec![*m, *a, *b],
            Op::Mov(a) | Op::Any(a) | Op::All(a) | Op::SimdIf(a) => vec![*a],
            Op::RdRegion { src, .. } => vec![*src],
            Op::WrRegion { old, new, pred, .. } => {
                let mut v = vec![*old, *new];
                v.extend(pred);
                v
            }
            Op::ISelect { src, idx } => vec![*src, *idx],
            Op::MediaRead { x, y, .. } => vec![*x, *y],
            Op::MediaWrite { x, y, data, .. } => vec![*x, *y, *data],
            Op::OwordRead { offset, .. } => vec![*offset],
            Op::OwordWrite { offset, data, .. } => vec![*offset, *data],
            Op::ScatterRead { global, offsets, .. } => vec![*global, *offsets],
            Op::ScatterWrite { global, offsets, data, .. } => vec![*global, *offsets, *data],
            Op::Atomic { offsets, src0, src1, .. } => {
                let mut v = vec![*offsets];
                v.extend(src0);
                v.extend(src1);
                v
            }
        }
    }

    pub fn map_operands(&mut self, mut f: impl FnMut(ValueId) -> ValueId) {
        let mut g = |v: &mut ValueId| *v = f(*v);
        match self {
            Op::Const(_) | Op::Arg(_) | Op::ThreadX | Op::ThreadY | Op::SimdElse | Op::SimdEnd => {}
            Op::Binary(_, a, b) | Op::Cmp(_, a, b) => {
                g(a);
                g(b);
            }
            Op::Sel(m, a, b) => {
                g(m);
                g(a);
                g(b);
            }
            Op::Mov(a) | Op::Any(a) | Op::All(a) | Op::SimdIf(a) => g(a),
            Op::RdRegion { src, .. } => g(src),
            Op::WrRegion { old, new, pred, .. } => {
                g(old);
                g(new);
                if let Some(p) = pred {
                    g(p);
                }
            }
            Op::ISelect { src, idx } => {
                g(src);
                g(idx);
            }
            Op::MediaRead { x, y, .. } => {
                g(x);
                g(y);
            }
            Op::MediaWrite { x, y, data, .. } => {
                g(x);
                g(y);
                g(data);
            }
            Op::OwordRead { offset, .. } => g(offset),
            Op::OwordWrite { offset, data, .. } => {
                g(offset);
                g(data);
            }
            Op::ScatterRead { global, offsets, .. } => {
                g(global);
                g(offsets);
            }
            Op::ScatterWrite { global, offsets, data, .. } => {
                g(global);
                g(offsets);
                g(data);
            }
            Op::Atomic { offsets, src0, src1, .. } => {
                g(offsets);
                if let Some(s) = src0 {
                    g(s);
                }
                if let Some(s) = src1 {
                    g(s);
                }
            }
        }
    }

    /// Instructions with effects beyond their result value.
    pub fn has_side_effects(&self) -> bool {
        matches!(
            self,
            Op::MediaWrite { .. }
                | Op::OwordWrite { .. }
                | Op::ScatterWrite { .. }
                | Op::Atomic { .. }
                | Op::SimdIf(_)
                | Op::SimdElse
                | Op::SimdEnd
        )
    }

    pub fn is_marker(&self) -> bool {
        matches!(self, Op::SimdIf(_) | Op::SimdElse | Op::SimdEnd)
    }

    pub fn is_memory(&self) -> bool {
        matches!(
            self,
            Op::MediaRead { .. }
                | Op::MediaWrite { .. }
                | Op::OwordRead { .. }
                | Op::OwordWrite { .. }
                | Op::ScatterRead { .. }
                | Op::ScatterWrite { .. }
                | Op::Atomic { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            Op::Const(_) => "const",
            Op::Arg(_) => "arg",
            Op::ThreadX => "thread_x",
            Op::ThreadY => "thread_y",
            Op::Binary(op, ..) => op.mnemonic(),
            Op::Cmp(..) => "cmp",
            Op::Sel(..) => "sel",
            Op::Mov(_) => "mov",
            Op::Any(_) => "any",
            Op::All(_) => "all",
            Op::RdRegion { .. } => "rdregion",
            Op::WrRegion { .. } => "wrregion",
            Op::ISelect { .. } => "iselect",
            Op::MediaRead { .. } => "media_read",
            Op::MediaWrite { .. } => "media_write",
            Op::OwordRead { .. } => "oword_read",
            Op::OwordWrite { .. } => "oword_write",
            Op::ScatterRead { .. } => "scatter_read",
            Op::ScatterWrite { .. } => "scatter_write",
            Op::Atomic { .. } => "atomic",
            Op::SimdIf(_) => "simd_if",
            Op::SimdElse => "simd_else",
            Op::SimdEnd => "simd_end",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inst {
    pub id: ValueId,
    pub ty: Option<Ty>,
    pub op: Op,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Module {
    pub name: String,
    pub params: Vec<Param>,
    pub insts: Vec<Inst>,
}

impl Module {
    pub fn new(name: impl Into<String>, params: Vec<Param>) -> Module {
        Module { name: name.into(), params, insts: Vec::new() }
    }

    pub fn next_id(&self) -> ValueId {
        ValueId(self.insts.iter().map(|i| i.id.0 + 1).max().unwrap_or(0))
    }

    pub fn types(&self) -> HashMap<ValueId, Ty> {
        self.insts.iter().filter_map(|i| i.ty.map(|t| (i.id, t))).collect()
    }

    pub fn positions(&self) -> HashMap<ValueId, usize> {
        self.insts.iter().enumerate().map(|(k, i)| (i.id, k)).collect()
    }

    /// Use counts of every value.
    pub fn use_counts(&self) -> HashMap<ValueId, usize> {
        let mut uses = HashMap::new();
        for inst in &self.insts {
            for v in inst.op.operands() {
                *uses.entry(v).or_insert(0) += 1;
            }
        }
        uses
    }

    /// Users (instruction indices) of every value, in program order.
    pub fn users(&self) -> HashMap<ValueId, Vec<usize>> {
        let mut users: HashMap<ValueId, Vec<usize>> = HashMap::new();
        for (k, inst) in self.insts.iter().enumerate() {
            let mut ops = inst.op.operands();
            ops.dedup();
            for v in ops {
                let e = users.entry(v).or_default();
                if e.last() != Some(&k) {
                    e.push(k);
                }
            }
        }
        users
    }

    pub fn replace_uses(&mut self, from: ValueId, to: ValueId) {
        for inst in &mut self.insts {
            inst.op.map_operands(|v| if v == from { to } else { v });
        }
    }

    /// Renumbers values densely in program order.
    pub fn compact(&mut self) {
        let map: HashMap<ValueId, ValueId> =
            self.insts.iter().enumerate().map(|(k, i)| (i.id, ValueId(k as u32))).collect();
        for inst in &mut self.insts {
            inst.id = map[&inst.id];
            inst.op.map_operands(|v| map.get(&v).copied().unwrap_or(v));
        }
    }

    pub fn surface_index(&self, name: &str) -> Option<u32> {
        self.params
            .iter()
            .position(|p| matches!(p, Param::Surface { name: n } if n == name))
            .map(|p| p as u32)
    }

    /// Structured region tree of the instruction list.
    pub fn scopes(&self) -> Result<ScopeTree, VerifyError> {
        ScopeTree::build(self)
    }
}

/// One structured region: the top level, or a then/else body.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scope {
    pub parent: Option<usize>,
    /// Lane count of the nearest enclosing per-lane mask; `None` when every
    /// enclosing condition is uniform (scalar).
    pub mask_len: Option<u32>,
    /// Index of the `simd_if` that opens this scope.
    pub opener: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScopeTree {
    pub scopes: Vec<Scope>,
    /// Scope of each instruction. Markers belong to the enclosing scope.
    pub inst_scope: Vec<usize>,
    /// For each `simd_if` index: the matching `simd_else` (if any) and `simd_end`.
    pub matching: HashMap<usize, (Option<usize>, usize)>,
}

impl ScopeTree {
    fn build(m: &Module) -> Result<ScopeTree, VerifyError> {
        let types = m.types();
        let mut scopes = vec![Scope { parent: None, mask_len: None, opener: None }];
        let mut inst_scope = Vec::with_capacity(m.insts.len());
        // (if index, else index, scope of body)
        let mut stack: Vec<(usize, Option<usize>, usize)> = Vec::new();
        let mut matching = HashMap::new();
        let mut cur = 0usize;
        for (k, inst) in m.insts.iter().enumerate() {
            match &inst.op {
                Op::SimdIf(mask) => {
                    inst_scope.push(cur);
                    let len = types.get(mask).map(|t| t.len).unwrap_or(1);
                    let mask_len = if len > 1 { Some(len) } else { scopes[cur].mask_len };
                    scopes.push(Scope { parent: Some(cur), mask_len, opener: Some(k) });
                    let body = scopes.len() - 1;
                    stack.push((k, None, body));
                    cur = body;
                }
                Op::SimdElse => {
                    let Some(top) = stack.last_mut() else {
                        return Err(VerifyError::Structure { inst: inst.id, msg: "simd_else without simd_if".into() });
                    };
                    if top.1.is_some() {
                        return Err(VerifyError::Structure { inst: inst.id, msg: "duplicate simd_else".into() });
                    }
                    let parent = scopes[cur].parent.unwrap();
                    inst_scope.push(parent);
                    top.1 = Some(k);
                    let then_scope = &scopes[top.2];
                    let s = Scope { parent: Some(parent), mask_len: then_scope.mask_len, opener: Some(top.0) };
                    scopes.push(s);
                    top.2 = scopes.len() - 1;
                    cur = top.2;
                }
                Op::SimdEnd => {
                    let Some((open, els, _)) = stack.pop() else {
                        return Err(VerifyError::Structure { inst: inst.id, msg: "simd_end without simd_if".into() });
                    };
                    cur = scopes[cur].parent.unwrap();
                    inst_scope.push(cur);
                    matching.insert(open, (els, k));
                }
                _ => inst_scope.push(cur),
            }
        }
        if let Some((open, _, _)) = stack.last() {
            return Err(VerifyError::Structure {
                inst: m.insts[*open].id,
                msg: "simd_if without matching simd_end".into(),
            });
        }
        Ok(ScopeTree { scopes, inst_scope, matching })
    }

    /// True if `inner` is `outer` or nested inside it.
    pub fn within(&self, mut inner: usize, outer: usize) -> bool {
        loop {
            if inner == outer {
                return true;
            }
            match self.scopes[inner].parent {
                Some(p) => inner = p,
                None => return false,
            }
        }
    }

    /// Whether an instruction of `exec_len` lanes in scope `s` runs under the
    /// per-lane mask.
    pub fn is_masked(&self, s: usize, exec_len: u32) -> bool {
        self.scopes[s].mask_len == Some(exec_len) && exec_len > 1
    }
}

/// Number of lanes an instruction executes over, used for mask decisions.
pub fn exec_len(op: &Op, ty: Option<Ty>, types: &HashMap<ValueId, Ty>) -> u32 {
    let len_of = |v: &ValueId| types.get(v).map(|t| t.len).unwrap_or(1);
    match op {
        Op::WrRegion { new, .. } => len_of(new),
        Op::Any(a) | Op::All(a) | Op::SimdIf(a) => len_of(a),
        Op::ScatterWrite { offsets, .. } | Op::Atomic { offsets, .. } => len_of(offsets),
        Op::MediaWrite { data, .. } | Op::OwordWrite { data, .. } => len_of(data),
        _ => ty.map(|t| t.len).unwrap_or(1),
    }
}

/// Small helper for building modules by hand (tests, lowering).
pub struct Builder {
    pub module: Module,
    next: u32,
}

impl Builder {
    pub fn new(name: &str, params: Vec<Param>) -> Builder {
        Builder { module: Module::new(name, params), next: 0 }
    }

    /// Allocates an id without emitting an instruction.
    pub fn fresh(&mut self) -> ValueId {
        self.next += 1;
        ValueId(self.next - 1)
    }

    pub fn push(&mut self, op: Op, ty: Option<Ty>) -> ValueId {
        let id = ValueId(self.next);
        self.next += 1;
        self.module.insts.push(Inst { id, ty, op });
        id
    }

    pub fn value(&mut self, op: Op, elem: ElemType, len: u32) -> ValueId {
        self.push(op, Some(Ty::new(elem, len)))
    }

    pub fn konst(&mut self, v: Vector) -> ValueId {
        let ty = Ty::new(v.ty, v.len() as u32);
        self.push(Op::Const(v), Some(ty))
    }

    pub fn effect(&mut self, op: Op) -> ValueId {
        self.push(op, None)
    }

    pub fn finish(self) -> Module {
        self.module
    }
}
