//! Checked kernel: names resolved, shapes known, conversions explicit.

use std::fmt;

use crate::ir::Param;
use crate::memory::AtomicOp;
use crate::region::Region;
use crate::types::{BinOp, CmpRel, ElemType, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub elem: ElemType,
    pub rows: u32,
    pub cols: u32,
    pub matrix: bool,
}

impl Shape {
    pub fn scalar(elem: ElemType) -> Shape {
        Shape { elem, rows: 1, cols: 1, matrix: false }
    }

    pub fn vector(elem: ElemType, n: u32) -> Shape {
        Shape { elem, rows: 1, cols: n, matrix: false }
    }

    pub fn matrix(elem: ElemType, rows: u32, cols: u32) -> Shape {
        Shape { elem, rows, cols, matrix: true }
    }

    pub fn len(&self) -> u32 {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bytes(&self) -> usize {
        self.len() as usize * self.elem.size()
    }

    pub fn with_elem(self, elem: ElemType) -> Shape {
        Shape { elem, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.elem.c_name();
        if self.matrix {
            write!(f, "matrix<{t},{},{}>", self.rows, self.cols)
        } else if self.len() == 1 {
            write!(f, "{t}")
        } else {
            write!(f, "vector<{t},{}>", self.cols)
        }
    }
}

pub type VarId = usize;

#[derive(Clone, Debug, PartialEq)]
pub struct TVar {
    pub name: String,
    pub shape: Shape,
}

/// One addressing step: `region` in units of `elem`, over the bytes of the
/// previous step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Level {
    pub region: Region,
    pub elem: ElemType,
}

/// An assignable location: a variable, optionally narrowed by regions.
#[derive(Clone, Debug, PartialEq)]
pub struct Place {
    pub var: VarId,
    pub levels: Vec<Level>,
    pub shape: Shape,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TExpr {
    pub shape: Shape,
    pub kind: TKind,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TKind {
    Const(Vector),
    Read(Place),
    /// Region of an arbitrary value; result element type is `shape.elem`.
    Region { src: Box<TExpr>, region: Region },
    Arg(u32),
    ThreadX,
    ThreadY,
    /// Conversion to `shape.elem`.
    Convert(Box<TExpr>),
    Binary(BinOp, Box<TExpr>, Box<TExpr>),
    Cmp(CmpRel, Box<TExpr>, Box<TExpr>),
    Sel { mask: Box<TExpr>, a: Box<TExpr>, b: Box<TExpr> },
    ISelect { src: Box<TExpr>, idx: Box<TExpr> },
    Any(Box<TExpr>),
    All(Box<TExpr>),
    Atomic { op: AtomicOp, surf: u32, offsets: Box<TExpr>, src0: Option<Box<TExpr>>, src1: Option<Box<TExpr>> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum TStmt {
    /// `value` has the place's element type and its length or length 1.
    /// `pred` restricts the write to lanes where it is nonzero.
    Assign { place: Place, value: TExpr, pred: Option<TExpr> },
    MediaRead { surf: u32, x: TExpr, y: TExpr, rows: u32, place: Place },
    MediaWrite { surf: u32, x: TExpr, y: TExpr, rows: u32, data: TExpr },
    OwordRead { surf: u32, offset: TExpr, place: Place },
    OwordWrite { surf: u32, offset: TExpr, data: TExpr },
    ScatterRead { surf: u32, global: TExpr, offsets: TExpr, place: Place },
    ScatterWrite { surf: u32, global: TExpr, offsets: TExpr, data: TExpr },
    /// Expression evaluated for its effects.
    Eval(TExpr),
    /// A length-1 condition is uniform for the whole thread.
    SimdIf { cond: TExpr, then: Vec<TStmt>, els: Option<Vec<TStmt>> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TKernel {
    pub name: String,
    pub params: Vec<Param>,
    pub vars: Vec<TVar>,
    pub body: Vec<TStmt>,
}
