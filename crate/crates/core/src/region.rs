//! Region descriptors and the reference gather/scatter semantics.
//!
//! A region selects `len` elements from a byte-addressed source. Element `k`
//! lives at byte `offset_bytes + ((k / width) * vstride + (k % width) * hstride) * size`,
//! where `size` is the byte size of the *result* element type. Reading with an
//! element type different from the source's reinterprets the bytes.

use std::fmt;

use thiserror::Error;

use crate::types::{ElemType, Vector};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegionError {
    #[error("region width must be at least 1")]
    ZeroWidth,
    #[error("region length {len} is not a multiple of width {width}")]
    RaggedRows { len: u32, width: u32 },
    #[error("region offset {offset} is not aligned to element size {size}")]
    Misaligned { offset: u32, size: usize },
    #[error("region element {lane} at byte {byte} lies outside a {bytes}-byte source")]
    OutOfBounds { lane: u32, byte: i64, bytes: usize },
    #[error("length mismatch: expected {expected} elements, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("write region targets element {index} more than once")]
    Overlapping { index: i64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Region {
    pub vstride: i32,
    pub width: u32,
    pub hstride: i32,
    pub offset_bytes: u32,
    pub len: u32,
}

impl Region {
    pub fn new(vstride: i32, width: u32, hstride: i32, offset_bytes: u32, len: u32) -> Region {
        Region { vstride, width, hstride, offset_bytes, len }
    }

    /// The whole of a `len`-element value.
    pub fn identity(len: u32) -> Region {
        Region { vstride: len as i32, width: len, hstride: 1, offset_bytes: 0, len }
    }

    /// One element repeated `len` times.
    pub fn broadcast(offset_bytes: u32, len: u32) -> Region {
        Region { vstride: 0, width: 1, hstride: 0, offset_bytes, len }
    }

    pub fn rows(&self) -> u32 {
        self.len / self.width.max(1)
    }

    /// Element index (relative to the offset, in result-element units) of lane `k`.
    pub fn elem_index(&self, k: u32) -> i64 {
        let w = self.width.max(1);
        (k / w) as i64 * self.vstride as i64 + (k % w) as i64 * self.hstride as i64
    }

    pub fn byte_offset(&self, k: u32, elem_size: usize) -> i64 {
        self.offset_bytes as i64 + self.elem_index(k) * elem_size as i64
    }

    pub fn byte_offsets(&self, elem_size: usize) -> Vec<i64> {
        (0..self.len).map(|k| self.byte_offset(k, elem_size)).collect()
    }

    /// Checks shape, alignment and bounds against a source of `src_bytes` bytes.
    pub fn validate(&self, elem_size: usize, src_bytes: usize) -> Result<(), RegionError> {
        if self.width == 0 {
            return Err(RegionError::ZeroWidth);
        }
        if self.len % self.width != 0 {
            return Err(RegionError::RaggedRows { len: self.len, width: self.width });
        }
        if self.offset_bytes as usize % elem_size != 0 {
            return Err(RegionError::Misaligned { offset: self.offset_bytes, size: elem_size });
        }
        for k in 0..self.len {
            let byte = self.byte_offset(k, elem_size);
            if byte < 0 || byte as usize + elem_size > src_bytes {
                return Err(RegionError::OutOfBounds { lane: k, byte, bytes: src_bytes });
            }
        }
        Ok(())
    }

    /// Write regions must not target any element twice.
    pub fn check_distinct(&self) -> Result<(), RegionError> {
        let mut seen = std::collections::HashSet::new();
        for k in 0..self.len {
            let idx = self.elem_index(k);
            if !seen.insert(idx) {
                return Err(RegionError::Overlapping { index: idx });
            }
        }
        Ok(())
    }

    /// True if this region reads every element of a `src_bytes`-byte value in order.
    pub fn is_identity(&self, elem_size: usize, src_bytes: usize) -> bool {
        self.len as usize * elem_size == src_bytes
            && (0..self.len).all(|k| self.byte_offset(k, elem_size) == k as i64 * elem_size as i64)
    }

    /// Finds a region with non-negative strides reproducing `offsets` (byte
    /// offsets of consecutive lanes). Prefers the fewest rows.
    pub fn from_byte_offsets(offsets: &[i64], elem_size: usize) -> Option<Region> {
        let n = offsets.len();
        if n == 0 {
            return None;
        }
        let base = offsets[0];
        if base < 0 || base > u32::MAX as i64 {
            return None;
        }
        let size = elem_size as i64;
        let mut deltas = Vec::with_capacity(n);
        for &o in offsets {
            let d = o - base;
            if d % size != 0 {
                return None;
            }
            deltas.push(d / size);
        }
        if n == 1 {
            return Some(Region::broadcast(base as u32, 1));
        }
        for w in (1..=n).rev().filter(|w| n % w == 0) {
            let h = if w > 1 { deltas[1] } else { 0 };
            let v = if n > w { deltas[w] } else { w as i64 * h };
            if h < 0 || v < 0 || h > i32::MAX as i64 || v > i32::MAX as i64 {
                continue;
            }
            let ok = deltas
                .iter()
                .enumerate()
                .all(|(k, &d)| d == (k / w) as i64 * v + (k % w) as i64 * h);
            if ok {
                return Some(Region::new(v as i32, w as u32, h as i32, base as u32, n as u32));
            }
        }
        None
    }

    /// Composes `outer` applied to the result of `self`: returns byte offsets
    /// into the original source for each outer lane, provided every outer
    /// element maps to contiguous source bytes.
    pub fn compose_offsets(
        &self,
        inner_size: usize,
        outer: &Region,
        outer_size: usize,
    ) -> Option<Vec<i64>> {
        let inner = self.byte_offsets(inner_size);
        let mut out = Vec::with_capacity(outer.len as usize);
        for k in 0..outer.len {
            let b = outer.byte_offset(k, outer_size);
            if b < 0 {
                return None;
            }
            let mut first = None;
            for i in 0..outer_size as i64 {
                let byte = b + i;
                let elem = (byte / inner_size as i64) as usize;
                let within = byte % inner_size as i64;
                let src = *inner.get(elem)? + within;
                match first {
                    None => first = Some(src),
                    Some(f) if src != f + i => return None,
                    _ => {}
                }
            }
            out.push(first?);
        }
        Some(out)
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "<{};{},{}> off={} n={}",
            self.vstride, self.width, self.hstride, self.offset_bytes, self.len
        )
    }
}

/// `replicate<K, VS, W, HS>(start)`: `k` blocks of `w` elements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ReplicateSpec {
    pub k: u32,
    pub vs: u32,
    pub w: u32,
    pub hs: u32,
    pub start: u32,
}

impl ReplicateSpec {
    pub fn to_region(&self, elem_size: usize) -> Region {
        Region::new(
            self.vs as i32,
            self.w.max(1),
            self.hs as i32,
            self.start * elem_size as u32,
            self.k * self.w,
        )
    }
}

/// Gathers `region.len` elements of type `ty` from `src`.
pub fn rdregion_eval(src: &Vector, region: &Region, ty: ElemType) -> Result<Vector, RegionError> {
    region.validate(ty.size(), src.bytes.len())?;
    let size = ty.size();
    let mut out = Vec::with_capacity(region.len as usize * size);
    for k in 0..region.len {
        let b = region.byte_offset(k, size) as usize;
        out.extend_from_slice(&src.bytes[b..b + size]);
    }
    Ok(Vector { ty, bytes: out })
}

/// Returns `old` with the region's positions replaced by `new` wherever
/// `pred` (if present) is true.
pub fn wrregion_eval(
    old: &Vector,
    new: &Vector,
    region: &Region,
    pred: Option<&[bool]>,
) -> Result<Vector, RegionError> {
    let size = new.ty.size();
    region.validate(size, old.bytes.len())?;
    if new.len() != region.len as usize {
        return Err(RegionError::LengthMismatch { expected: region.len as usize, got: new.len() });
    }
    if let Some(p) = pred {
        if p.len() != new.len() {
            return Err(RegionError::LengthMismatch { expected: new.len(), got: p.len() });
        }
    }
    let mut out = old.clone();
    for k in 0..region.len {
        if pred.map_or(true, |p| p[k as usize]) {
            let b = region.byte_offset(k, size) as usize;
            let s = k as usize * size;
            out.bytes[b..b + size].copy_from_slice(&new.bytes[s..s + size]);
        }
    }
    Ok(out)
}

/// Block `b`, lane `j` of the result is `src[start + b*vs + j*hs]`.
pub fn replicate_eval(src: &Vector, spec: &ReplicateSpec) -> Result<Vector, RegionError> {
    let n = src.len() as i64;
    let size = src.ty.size();
    let mut out = Vec::with_capacity((spec.k * spec.w) as usize * size);
    for b in 0..spec.k {
        for j in 0..spec.w {
            let idx = spec.start as i64 + b as i64 * spec.vs as i64 + j as i64 * spec.hs as i64;
            if idx >= n {
                return Err(RegionError::OutOfBounds {
                    lane: b * spec.w + j,
                    byte: idx * size as i64,
                    bytes: src.bytes.len(),
                });
            }
            let s = idx as usize * size;
            out.extend_from_slice(&src.bytes[s..s + size]);
        }
    }
    Ok(Vector { ty: src.ty, bytes: out })
}
