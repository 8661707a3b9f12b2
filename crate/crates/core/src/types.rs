//! Element types and the scalar arithmetic shared by the IR evaluator and the
//! ISA emulator. Both executors call into this module so their results agree
//! bit for bit.

use std::fmt;


#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ElemType {
    B,
    Ub,
    W,
    Uw,
    D,
    Ud,
    F,
    Df,
}

impl ElemType {
    pub const ALL: [ElemType; 8] = [
        ElemType::B,
        ElemType::Ub,
        ElemType::W,
        ElemType::Uw,
        ElemType::D,
        ElemType::Ud,
        ElemType::F,
        ElemType::Df,
    ];

    pub fn size(self) -> usize {
        match self {
            ElemType::B | ElemType::Ub => 1,
            ElemType::W | ElemType::Uw => 2,
            ElemType::D | ElemType::Ud | ElemType::F => 4,
            ElemType::Df => 8,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, ElemType::F | ElemType::Df)
    }

    pub fn is_int(self) -> bool {
        !self.is_float()
    }

    pub fn is_signed(self) -> bool {
        matches!(self, ElemType::B | ElemType::W | ElemType::D | ElemType::F | ElemType::Df)
    }

    pub fn bits(self) -> u32 {
        self.size() as u32 * 8
    }

    /// ISA type suffix, as in `:ub` or `:f`.
    pub fn suffix(self) -> &'static str {
        match self {
            ElemType::B => "b",
            ElemType::Ub => "ub",
            ElemType::W => "w",
            ElemType::Uw => "uw",
            ElemType::D => "d",
            ElemType::Ud => "ud",
            ElemType::F => "f",
            ElemType::Df => "df",
        }
    }

    pub fn from_suffix(s: &str) -> Option<ElemType> {
        ElemType::ALL.into_iter().find(|t| t.suffix() == s)
    }

    /// Kernel-language spelling.
    pub fn c_name(self) -> &'static str {
        match self {
            ElemType::B => "char",
            ElemType::Ub => "uchar",
            ElemType::W => "short",
            ElemType::Uw => "ushort",
            ElemType::D => "int",
            ElemType::Ud => "uint",
            ElemType::F => "float",
            ElemType::Df => "double",
        }
    }

    pub fn from_c_name(s: &str) -> Option<ElemType> {
        Some(match s {
            "char" => ElemType::B,
            "uchar" => ElemType::Ub,
            "short" => ElemType::W,
            "ushort" => ElemType::Uw,
            "int" => ElemType::D,
            "uint" => ElemType::Ud,
            "float" => ElemType::F,
            "double" => ElemType::Df,
            _ => return None,
        })
    }

    /// Whether every value of `self` is exactly representable in `to`.
    pub fn embeds_exactly_in(self, to: ElemType) -> bool {
        if self == to {
            return true;
        }
        match to {
            ElemType::Df => self != ElemType::Df,
            ElemType::F => self.is_int() && self.size() <= 2,
            _ if to.is_int() && self.is_int() => {
                if self.is_signed() {
                    to.is_signed() && to.size() > self.size()
                } else if to.is_signed() {
                    to.size() > self.size()
                } else {
                    to.size() > self.size()
                }
            }
            _ => false,
        }
    }
}

impl fmt::Display for ElemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.suffix())
    }
}

/// Integer promotion of a single operand type: anything narrower than 32 bits
/// computes as signed 32-bit.
pub fn promote_unary(t: ElemType) -> ElemType {
    if t.is_int() && t.size() < 4 {
        ElemType::D
    } else {
        t
    }
}

/// Usual arithmetic conversions over two operand types.
pub fn promote(a: ElemType, b: ElemType) -> ElemType {
    if a == ElemType::Df || b == ElemType::Df {
        return ElemType::Df;
    }
    if a == ElemType::F || b == ElemType::F {
        return ElemType::F;
    }
    let (a, b) = (promote_unary(a), promote_unary(b));
    if a == ElemType::Ud || b == ElemType::Ud {
        ElemType::Ud
    } else {
        ElemType::D
    }
}

pub fn promote_all(types: impl IntoIterator<Item = ElemType>) -> Option<ElemType> {
    let mut it = types.into_iter();
    let first = promote_unary(it.next()?);
    Some(it.fold(first, promote))
}

/// A single element value. Integers are held sign- or zero-extended; `f`
/// values are held as the exact `f64` image of an `f32`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Num {
    Int(i64),
    Float(f64),
}

impl Num {
    pub fn is_nonzero(self) -> bool {
        match self {
            Num::Int(i) => i != 0,
            Num::Float(x) => x != 0.0,
        }
    }

    pub fn as_i64(self) -> i64 {
        match convert(self, ElemType::D) {
            Num::Int(i) => i,
            Num::Float(_) => unreachable!(),
        }
    }
}

fn wrap_int(i: i64, to: ElemType) -> i64 {
    match to {
        ElemType::B => i as i8 as i64,
        ElemType::Ub => i as u8 as i64,
        ElemType::W => i as i16 as i64,
        ElemType::Uw => i as u16 as i64,
        ElemType::D => i as i32 as i64,
        ElemType::Ud => i as u32 as i64,
        ElemType::F | ElemType::Df => unreachable!("wrap_int on float type"),
    }
}

fn float_to_int_bits(x: f64) -> i64 {
    if !x.is_finite() {
        return 0;
    }
    let t = x.trunc();
    if t.abs() < 9.0e18 {
        t as i64
    } else {
        t.rem_euclid(18_446_744_073_709_551_616.0) as u64 as i64
    }
}

/// Converts a value to `to`: exact where possible, float to integer truncates
/// toward zero, and narrowing integer conversion wraps.
pub fn convert(n: Num, to: ElemType) -> Num {
    match (n, to.is_float()) {
        (Num::Int(i), false) => Num::Int(wrap_int(i, to)),
        (Num::Int(i), true) => match to {
            ElemType::F => Num::Float(i as f32 as f64),
            _ => Num::Float(i as f64),
        },
        (Num::Float(x), false) => Num::Int(wrap_int(float_to_int_bits(x), to)),
        (Num::Float(x), true) => match to {
            ElemType::F => Num::Float(x as f32 as f64),
            _ => Num::Float(x),
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Min,
    Max,
}

impl BinOp {
    pub const ALL: [BinOp; 12] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Div,
        BinOp::Rem,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
        BinOp::Shl,
        BinOp::Shr,
        BinOp::Min,
        BinOp::Max,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
            BinOp::Rem => "rem",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
            BinOp::Shl => "shl",
            BinOp::Shr => "shr",
            BinOp::Min => "min",
            BinOp::Max => "max",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<BinOp> {
        BinOp::ALL.into_iter().find(|o| o.mnemonic() == s)
    }

    pub fn int_only(self) -> bool {
        matches!(self, BinOp::And | BinOp::Or | BinOp::Xor | BinOp::Shl | BinOp::Shr)
    }
}

/// Applies `op` at computation type `ty`. Operands are converted to `ty`
/// first; the result is a value of `ty`. Integer division by zero yields 0.
/// Returns `None` for bitwise operations on floating-point types.
pub fn binop(op: BinOp, ty: ElemType, a: Num, b: Num) -> Option<Num> {
    let a = convert(a, ty);
    let b = convert(b, ty);
    if ty.is_float() {
        if op.int_only() {
            return None;
        }
        let (Num::Float(x), Num::Float(y)) = (a, b) else { unreachable!() };
        let r = if ty == ElemType::F {
            let (x, y) = (x as f32, y as f32);
            (match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
                BinOp::Rem => x % y,
                BinOp::Min => if y < x { y } else { x },
                BinOp::Max => if y > x { y } else { x },
                _ => unreachable!(),
            }) as f64
        } else {
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
                BinOp::Rem => x % y,
                BinOp::Min => if y < x { y } else { x },
                BinOp::Max => if y > x { y } else { x },
                _ => unreachable!(),
            }
        };
        return Some(Num::Float(r));
    }
    let (Num::Int(x), Num::Int(y)) = (a, b) else { unreachable!() };
    let r = match op {
        BinOp::Add => x.wrapping_add(y),
        BinOp::Sub => x.wrapping_sub(y),
        BinOp::Mul => x.wrapping_mul(y),
        BinOp::Div => {
            if y == 0 {
                0
            } else {
                x.wrapping_div(y)
            }
        }
        BinOp::Rem => {
            if y == 0 {
                0
            } else {
                x.wrapping_rem(y)
            }
        }
        BinOp::And => x & y,
        BinOp::Or => x | y,
        BinOp::Xor => x ^ y,
        BinOp::Shl => x.wrapping_shl((y & 31) as u32),
        BinOp::Shr => x >> (y & 31),
        BinOp::Min => x.min(y),
        BinOp::Max => x.max(y),
    };
    Some(Num::Int(wrap_int(r, ty)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpRel {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpRel {
    pub const ALL: [CmpRel; 6] = [CmpRel::Eq, CmpRel::Ne, CmpRel::Lt, CmpRel::Le, CmpRel::Gt, CmpRel::Ge];

    pub fn mnemonic(self) -> &'static str {
        match self {
            CmpRel::Eq => "eq",
            CmpRel::Ne => "ne",
            CmpRel::Lt => "lt",
            CmpRel::Le => "le",
            CmpRel::Gt => "gt",
            CmpRel::Ge => "ge",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<CmpRel> {
        CmpRel::ALL.into_iter().find(|r| r.mnemonic() == s)
    }
}

/// Compares two values as mathematical numbers. Callers convert operands to
/// the comparison type beforehand when that conversion is lossy.
pub fn compare(rel: CmpRel, a: Num, b: Num) -> bool {
    use std::cmp::Ordering;
    let ord = match (a, b) {
        (Num::Int(x), Num::Int(y)) => Some(x.cmp(&y)),
        _ => {
            let f = |n: Num| match n {
                Num::Int(i) => i as f64,
                Num::Float(x) => x,
            };
            f(a).partial_cmp(&f(b))
        }
    };
    match ord {
        None => rel == CmpRel::Ne,
        Some(o) => match rel {
            CmpRel::Eq => o == Ordering::Equal,
            CmpRel::Ne => o != Ordering::Equal,
            CmpRel::Lt => o == Ordering::Less,
            CmpRel::Le => o != Ordering::Greater,
            CmpRel::Gt => o == Ordering::Greater,
            CmpRel::Ge => o != Ordering::Less,
        },
    }
}

/// Reads one little-endian element of type `ty` from `bytes`.
pub fn load(ty: ElemType, bytes: &[u8]) -> Num {
    let b = &bytes[..ty.size()];
    match ty {
        ElemType::B => Num::Int(b[0] as i8 as i64),
        ElemType::Ub => Num::Int(b[0] as i64),
        ElemType::W => Num::Int(i16::from_le_bytes([b[0], b[1]]) as i64),
        ElemType::Uw => Num::Int(u16::from_le_bytes([b[0], b[1]]) as i64),
        ElemType::D => Num::Int(i32::from_le_bytes(b.try_into().unwrap()) as i64),
        ElemType::Ud => Num::Int(u32::from_le_bytes(b.try_into().unwrap()) as i64),
        ElemType::F => Num::Float(f32::from_le_bytes(b.try_into().unwrap()) as f64),
        ElemType::Df => Num::Float(f64::from_le_bytes(b.try_into().unwrap())),
    }
}

/// Writes `n`, converted to `ty`, as little-endian bytes.
pub fn store(ty: ElemType, n: Num, out: &mut [u8]) {
    let n = convert(n, ty);
    let out = &mut out[..ty.size()];
    match (ty, n) {
        (ElemType::F, Num::Float(x)) => out.copy_from_slice(&(x as f32).to_le_bytes()),
        (ElemType::Df, Num::Float(x)) => out.copy_from_slice(&x.to_le_bytes()),
        (_, Num::Int(i)) => out.copy_from_slice(&i.to_le_bytes()[..ty.size()]),
        _ => unreachable!(),
    }
}

/// A typed, byte-backed vector value.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Vector {
    pub ty: ElemType,
    pub bytes: Vec<u8>,
}

impl Vector {
    pub fn zeroed(ty: ElemType, len: usize) -> Vector {
        Vector { ty, bytes: vec![0; len * ty.size()] }
    }

    pub fn from_nums(ty: ElemType, nums: &[Num]) -> Vector {
        let mut v = Vector::zeroed(ty, nums.len());
        for (k, &n) in nums.iter().enumerate() {
            v.set(k, n);
        }
        v
    }

    pub fn splat(ty: ElemType, n: Num, len: usize) -> Vector {
        Vector::from_nums(ty, &vec![n; len])
    }

    pub fn from_i64s(ty: ElemType, vals: &[i64]) -> Vector {
        let nums: Vec<Num> = vals.iter().map(|&v| Num::Int(v)).collect();
        Vector::from_nums(ty, &nums)
    }

    pub fn len(&self) -> usize {
        self.bytes.len() / self.ty.size()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn get(&self, k: usize) -> Num {
        let s = self.ty.size();
        load(self.ty, &self.bytes[k * s..])
    }

    pub fn set(&mut self, k: usize, n: Num) {
        let s = self.ty.size();
        store(self.ty, n, &mut self.bytes[k * s..]);
    }

    /// Number of maximal runs of equal adjacent elements.
    pub fn runs(&self) -> usize {
        let esz = self.ty.size();
        let mut it = self.bytes.chunks_exact(esz);
        let Some(mut prev) = it.next() else { return 0 };
        let mut n = 1;
        for e in it {
            if e != prev {
                n += 1;
            }
            prev = e;
        }
        n
    }

    pub fn nums(&self) -> Vec<Num> {
        (0..self.len()).map(|k| self.get(k)).collect()
    }

    /// Same bytes viewed with another element type.
    pub fn retyped(&self, ty: ElemType) -> Option<Vector> {
        (self.bytes.len() % ty.size() == 0).then(|| Vector { ty, bytes: self.bytes.clone() })
    }

    pub fn is_splat(&self) -> bool {
        let s = self.ty.size();
        self.bytes.chunks(s).all(|c| c == &self.bytes[..s])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_match_kinds() {
        let sizes: Vec<usize> = ElemType::ALL.iter().map(|t| t.size()).collect();
        assert_eq!(sizes, vec![1, 1, 2, 2, 4, 4, 4, 8]);
    }

    #[test]
    fn c_promotion() {
        assert_eq!(promote(ElemType::Ub, ElemType::Ub), ElemType::D);
        assert_eq!(promote(ElemType::D, ElemType::Ud), ElemType::Ud);
        assert_eq!(promote(ElemType::Uw, ElemType::F), ElemType::F);
        assert_eq!(promote(ElemType::F, ElemType::Df), ElemType::Df);
        assert_eq!(promote(ElemType::W, ElemType::B), ElemType::D);
    }

    #[test]
    fn float_to_int_truncates_and_wraps() {
        assert_eq!(convert(Num::Float(254.97), ElemType::Ub), Num::Int(254));
        assert_eq!(convert(Num::Float(-1.9), ElemType::D), Num::Int(-1));
        assert_eq!(convert(Num::Float(300.0), ElemType::Ub), Num::Int(44));
        assert_eq!(convert(Num::Float(-1.0), ElemType::Ub), Num::Int(255));
        assert_eq!(convert(Num::Float(f64::NAN), ElemType::D), Num::Int(0));
    }

    #[test]
    fn linear_filter_average() {
        let sum = convert(Num::Int(2295), ElemType::F);
        let avg = binop(BinOp::Mul, ElemType::F, sum, Num::Float(0.1111f32 as f64)).unwrap();
        assert_eq!(convert(avg, ElemType::Ub), Num::Int(254));
    }

    #[test]
    fn int_edge_cases() {
        assert_eq!(binop(BinOp::Div, ElemType::D, Num::Int(7), Num::Int(0)), Some(Num::Int(0)));
        assert_eq!(
            binop(BinOp::Div, ElemType::D, Num::Int(i32::MIN as i64), Num::Int(-1)),
            Some(Num::Int(i32::MIN as i64))
        );
        assert_eq!(binop(BinOp::Add, ElemType::Ub, Num::Int(200), Num::Int(100)), Some(Num::Int(44)));
        assert_eq!(binop(BinOp::Shr, ElemType::D, Num::Int(-8), Num::Int(1)), Some(Num::Int(-4)));
        assert_eq!(
            binop(BinOp::Mul, ElemType::Ud, Num::Int(0xffff_ffff), Num::Int(0xffff_ffff)),
            Some(Num::Int(1))
        );
        assert_eq!(binop(BinOp::And, ElemType::F, Num::Float(1.0), Num::Float(1.0)), None);
    }

    #[test]
    fn exact_embedding() {
        assert!(ElemType::Ub.embeds_exactly_in(ElemType::F));
        assert!(ElemType::Ub.embeds_exactly_in(ElemType::W));
        assert!(!ElemType::D.embeds_exactly_in(ElemType::F));
        assert!(!ElemType::D.embeds_exactly_in(ElemType::Ud));
        assert!(ElemType::Ud.embeds_exactly_in(ElemType::Df));
        assert!(!ElemType::B.embeds_exactly_in(ElemType::Uw));
    }

    #[test]
    fn load_store_roundtrip() {
        let mut buf = [0u8; 8];
        for ty in ElemType::ALL {
            store(ty, Num::Int(-3), &mut buf);
            assert_eq!(load(ty, &buf), convert(Num::Int(-3), ty));
        }
    }
}
