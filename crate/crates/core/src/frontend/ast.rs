use super::Span;
use crate::types::ElemType;

#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub kernels: Vec<Kernel>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub name: String,
    pub params: Vec<ParamDecl>,
    pub body: Vec<Stmt>,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParamDecl {
    Surface { name: String, span: Span },
    Scalar { ty: ElemType, name: String, span: Span },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Scalar,
    Vector,
    Matrix,
    VectorRef,
    MatrixRef,
}

impl ShapeKind {
    pub fn keyword(self) -> Option<&'static str> {
        match self {
            ShapeKind::Scalar => None,
            ShapeKind::Vector => Some("vector"),
            ShapeKind::Matrix => Some("matrix"),
            ShapeKind::VectorRef => Some("vector_ref"),
            ShapeKind::MatrixRef => Some("matrix_ref"),
        }
    }

    pub fn is_ref(self) -> bool {
        matches!(self, ShapeKind::VectorRef | ShapeKind::MatrixRef)
    }

    pub fn dims(self) -> usize {
        match self {
            ShapeKind::Scalar => 0,
            ShapeKind::Vector | ShapeKind::VectorRef => 1,
            ShapeKind::Matrix | ShapeKind::MatrixRef => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TypeSpec {
    pub kind: ShapeKind,
    pub elem: ElemType,
    pub dims: Vec<Expr>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    None,
    /// `= expr`
    Assign(Expr),
    /// `name(expr)`
    Ctor(Expr),
    /// `= { e, ... }`
    List(Vec<Expr>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    Inc,
    Dec,
    PreInc,
    PreDec,
    Compound(BinaryOp, Expr),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Stmt {
    Decl { ty: TypeSpec, name: String, init: Init, span: Span },
    /// `target = value` or `target op= value`.
    Assign { target: Expr, op: Option<BinaryOp>, value: Expr, span: Span },
    Expr { expr: Expr, span: Span },
    If { cond: Expr, then: Vec<Stmt>, els: Option<Vec<Stmt>>, span: Span },
    SimdIf { cond: Expr, then: Vec<Stmt>, els: Option<Vec<Stmt>>, span: Span },
    For { var_ty: ElemType, var: String, init: Expr, cond: Expr, step: Step, body: Vec<Stmt>, span: Span },
    Block { body: Vec<Stmt>, span: Span },
}

impl Stmt {
    pub fn span(&self) -> Span {
        match self {
            Stmt::Decl { span, .. }
            | Stmt::Assign { span, .. }
            | Stmt::Expr { span, .. }
            | Stmt::If { span, .. }
            | Stmt::SimdIf { span, .. }
            | Stmt::For { span, .. }
            | Stmt::Block { span, .. } => *span,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Not,
    BitNot,
}

impl UnaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Not => "!",
            UnaryOp::BitNot => "~",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Mul,
    Div,
    Rem,
    Add,
    Sub,
    Shl,
    Shr,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Xor,
    Or,
    LogicAnd,
    LogicOr,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Rem => "%",
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Shl => "<<",
            BinaryOp::Shr => ">>",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::And => "&",
            BinaryOp::Xor => "^",
            BinaryOp::Or => "|",
            BinaryOp::LogicAnd => "&&",
            BinaryOp::LogicOr => "||",
        }
    }

    /// Binding strength; larger binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinaryOp::Mul | BinaryOp::Div | BinaryOp::Rem => 10,
            BinaryOp::Add | BinaryOp::Sub => 9,
            BinaryOp::Shl | BinaryOp::Shr => 8,
            BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => 7,
            BinaryOp::Eq | BinaryOp::Ne => 6,
            BinaryOp::And => 5,
            BinaryOp::Xor => 4,
            BinaryOp::Or => 3,
            BinaryOp::LogicAnd => 2,
            BinaryOp::LogicOr => 1,
        }
    }

    pub fn from_symbol(s: &str) -> Option<BinaryOp> {
        use BinaryOp::*;
        [Mul, Div, Rem, Add, Sub, Shl, Shr, Lt, Le, Gt, Ge, Eq, Ne, And, Xor, Or, LogicAnd, LogicOr]
            .into_iter()
            .find(|op| op.symbol() == s)
    }

    /// Operator of a compound assignment token such as `+=`.
    pub fn from_compound(s: &str) -> Option<BinaryOp> {
        let op = s.strip_suffix('=')?;
        match op {
            "*" | "/" | "%" | "+" | "-" | "<<" | ">>" | "&" | "^" | "|" => BinaryOp::from_symbol(op),
            _ => None,
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge | BinaryOp::Eq | BinaryOp::Ne)
    }
}

/// Template argument: an element type or an expression.
#[derive(Clone, Debug, PartialEq)]
pub enum TArg {
    Type(ElemType),
    Expr(Expr),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Int { value: i64, unsigned: bool, span: Span },
    Float { value: f64, single: bool, span: Span },
    Var { name: String, span: Span },
    Unary { op: UnaryOp, expr: Box<Expr>, span: Span },
    Binary { op: BinaryOp, lhs: Box<Expr>, rhs: Box<Expr>, span: Span },
    Cast { ty: ElemType, expr: Box<Expr>, span: Span },
    /// `name<targs>(args)`: a builtin function, or element access when `name`
    /// is a variable.
    Call { name: String, targs: Vec<TArg>, args: Vec<Expr>, span: Span },
    Method { recv: Box<Expr>, name: String, targs: Vec<TArg>, args: Vec<Expr>, span: Span },
    /// `base[index]`
    Index { base: Box<Expr>, index: Box<Expr>, span: Span },
    /// `base(args)` on a non-identifier base.
    Apply { base: Box<Expr>, args: Vec<Expr>, span: Span },
}

impl Expr {
    pub fn span(&self) -> Span {
        match self {
            Expr::Int { span, .. }
            | Expr::Float { span, .. }
            | Expr::Var { span, .. }
            | Expr::Unary { span, .. }
            | Expr::Binary { span, .. }
            | Expr::Cast { span, .. }
            | Expr::Call { span, .. }
            | Expr::Method { span, .. }
            | Expr::Index { span, .. }
            | Expr::Apply { span, .. } => *span,
        }
    }

    pub fn int(value: i64, span: Span) -> Expr {
        Expr::Int { value, unsigned: false, span }
    }
}
