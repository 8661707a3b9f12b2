//! Region strategies shared by the property tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use proptest::prelude::*;

use cmc_core::region::Region;
use cmc_core::types::ElemType;

const SIZES: [ElemType; 4] = [ElemType::Ub, ElemType::W, ElemType::D, ElemType::Df];

/// An in-bounds region over a random source of `ty` elements.
#[derive(Clone, Debug)]
pub struct Spec {
    pub ty: ElemType,
    pub src: Vec<u8>,
    pub region: Region,
}

pub fn spec() -> impl Strategy<Value = Spec> {
    (0..SIZES.len(), 1u32..=8, 1u32..=4, 0i32..=4, 0i32..=12, 0u32..=8, 0usize..=8)
        .prop_flat_map(|(t, width, rows, h, v, off, slack)| {
            let ty = SIZES[t];
            let last = (rows as i32 - 1) * v + (width as i32 - 1) * h;
            let n = off as usize + last as usize + 1 + slack;
            let region = Region::new(v, width, h, off * ty.size() as u32, width * rows);
            proptest::collection::vec(any::<u8>(), n * ty.size()).prop_map(move |src| Spec { ty, src, region })
        })
}

/// Element index of lane `k` straight from the `<V;W,H>` definition.
pub fn index(r: &Region, size: usize, k: u32) -> usize {
    let (row, col) = (k / r.width, k % r.width);
    r.offset_bytes as usize / size + (row as i32 * r.vstride + col as i32 * r.hstride) as usize
}

pub fn elems(r: &Region, size: usize) -> BTreeSet<usize> {
    (0..r.len).map(|k| index(r, size, k)).collect()
}

pub fn distinct(r: &Region, size: usize) -> bool {
    elems(r, size).len() == r.len as usize
}

