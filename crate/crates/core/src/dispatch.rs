//! Grid launch description shared by the IR evaluator and the emulator.

use std::collections::BTreeMap;

use crate::memory::Surface;
use crate::types::Num;

#[derive(Clone, Debug, PartialEq)]
pub struct DispatchSpec {
    pub grid_w: u32,
    pub grid_h: u32,
    /// Surface bindings by kernel parameter name.
    pub surfaces: BTreeMap<String, Surface>,
    /// Scalar kernel arguments by parameter name.
    pub args: BTreeMap<String, Num>,
}

impl DispatchSpec {
    pub fn new(grid_w: u32, grid_h: u32) -> DispatchSpec {
        DispatchSpec { grid_w, grid_h, surfaces: BTreeMap::new(), args: BTreeMap::new() }
    }

    pub fn surface(mut self, name: &str, s: Surface) -> DispatchSpec {
        self.surfaces.insert(name.to_string(), s);
        self
    }

    pub fn arg(mut self, name: &str, v: i64) -> DispatchSpec {
        self.args.insert(name.to_string(), Num::Int(v));
        self
    }

    /// Thread coordinates in dispatch order: row-major, y outer.
    pub fn threads(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity((self.grid_w * self.grid_h) as usize);
        for y in 0..self.grid_h {
            for x in 0..self.grid_w {
                out.push((x, y));
            }
        }
        out
    }
}

/// Lane-mask stack shared by both evaluators. Masks are 32-bit words; the
/// bottom entry is all-active.
#[derive(Clone, Debug)]
pub struct MaskStack {
    frames: Vec<MaskFrame>,
}

#[derive(Clone, Copy, Debug)]
struct MaskFrame {
    bits: u32,
    /// Lane count of the nearest per-lane condition.
    len: Option<u32>,
    active: bool,
    parent_bits: u32,
    parent_active: bool,
    cond: u32,
}

fn len_mask(len: Option<u32>) -> u32 {
    match len {
        Some(n) if n < 32 => (1u32 << n) - 1,
        _ => u32::MAX,
    }
}

impl Default for MaskStack {
    fn default() -> Self {
        MaskStack::new()
    }
}

impl MaskStack {
    pub fn new() -> MaskStack {
        MaskStack {
            frames: vec![MaskFrame {
                bits: u32::MAX,
                len: None,
                active: true,
                parent_bits: u32::MAX,
                parent_active: true,
                cond: u32::MAX,
            }],
        }
    }

    fn top(&self) -> &MaskFrame {
        self.frames.last().expect("mask stack is never empty")
    }

    pub fn depth(&self) -> usize {
        self.frames.len()
    }

    /// False while inside a region with no active lanes.
    pub fn active(&self) -> bool {
        self.top().active
    }

    /// Opens a region. `cond` holds one flag per lane; a single flag is a
    /// uniform condition. Returns whether the body runs.
    pub fn begin(&mut self, cond: &[bool]) -> bool {
        let parent = *self.top();
        let (cbits, len) = if cond.len() == 1 {
            (if cond[0] { u32::MAX } else { 0 }, parent.len)
        } else {
            let bits = cond.iter().enumerate().fold(0u32, |acc, (k, &c)| acc | ((c as u32) << k));
            (bits, Some(cond.len() as u32))
        };
        let bits = parent.bits & cbits;
        let active = parent.active && bits & len_mask(len) != 0;
        self.frames.push(MaskFrame {
            bits,
            len,
            active,
            parent_bits: parent.bits,
            parent_active: parent.active,
            cond: cbits,
        });
        active
    }

    /// Switches to the else body. Returns whether it runs.
    pub fn flip(&mut self) -> bool {
        let f = self.frames.last_mut().expect("mask stack is never empty");
        f.bits = f.parent_bits & !f.cond;
        f.active = f.parent_active && f.bits & len_mask(f.len) != 0;
        f.active
    }

    pub fn end(&mut self) -> bool {
        if self.frames.len() > 1 {
            self.frames.pop();
            true
        } else {
            false
        }
    }

    /// Per-lane enable flags for an instruction of `exec` lanes. Only
    /// instructions whose width matches the enclosing per-lane condition
    /// are masked.
    pub fn lanes(&self, exec: u32) -> Vec<bool> {
        let top = self.top();
        if top.len == Some(exec) && exec > 1 {
            (0..exec).map(|k| top.bits >> k & 1 == 1).collect()
        } else {
            vec![true; exec as usize]
        }
    }

    /// The raw top mask word.
    pub fn bits(&self) -> u32 {
        self.top().bits
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_order_is_row_major() {
        let spec = DispatchSpec::new(2, 2);
        assert_eq!(spec.threads(), vec![(0, 0), (1, 0), (0, 1), (1, 1)]);
    }

    #[test]
    fn masks_compose_and_flip() {
        let mut m = MaskStack::new();
        let c1: Vec<bool> = (0..8).map(|k| k % 2 == 0).collect();
        assert!(m.begin(&c1));
        assert_eq!(m.lanes(8), c1);
        let c2: Vec<bool> = (0..8).map(|k| k < 4).collect();
        assert!(m.begin(&c2));
        assert_eq!(m.bits() & 0xff, 0b0000_0101);
        assert!(m.flip());
        assert_eq!(m.bits() & 0xff, 0b0101_0000);
        m.end();
        assert!(m.flip());
        assert_eq!(m.bits() & 0xff, 0b1010_1010);
        m.end();
        assert_eq!(m.depth(), 1);
        assert!(!m.end());
    }

    #[test]
    fn all_false_region_is_inactive() {
        let mut m = MaskStack::new();
        assert!(!m.begin(&[false; 16]));
        assert!(!m.active());
        assert!(m.flip());
        m.end();
        assert!(!m.begin(&[false]));
        assert!(m.flip());
    }

    #[test]
    fn unmatched_width_is_unmasked() {
        let mut m = MaskStack::new();
        m.begin(&[true, false, true, false]);
        assert_eq!(m.lanes(1), vec![true]);
        assert_eq!(m.lanes(8), vec![true; 8]);
        assert_eq!(m.lanes(4), vec![true, false, true, false]);
    }
}
