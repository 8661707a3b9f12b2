//! Surface memory model shared by the IR evaluator and the emulator.
//!
//! Media-block reads clamp coordinates to the image edge; media-block writes
//! clip. Scattered reads return 0 for inactive lanes; scattered writes and
//! atomics apply lanes in ascending order.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemError {
    #[error("surface store has {got} bytes, geometry requires {expected}")]
    Geometry { expected: usize, got: usize },
    #[error("{op} requires a {expected} surface")]
    WrongKind { op: &'static str, expected: &'static str },
    #[error("media block {w_bytes}x{h_rows} exceeds 64 bytes x 16 rows")]
    BlockTooLarge { w_bytes: usize, h_rows: usize },
    #[error("oword access offset {offset} is not 16-byte aligned")]
    Misaligned { offset: i64 },
    #[error("oword access size {n_bytes} is not one of 16, 32, 64, 128")]
    BadOwordSize { n_bytes: usize },
    #[error("access of {size} bytes at offset {offset} is outside a {len}-byte buffer")]
    OutOfBounds { offset: i64, size: usize, len: usize },
    #[error("lane {lane}: address {addr} is outside a {len}-byte buffer")]
    LaneOutOfBounds { lane: usize, addr: i64, len: usize },
    #[error("lane {lane}: atomic address {addr} is not dword aligned")]
    AtomicMisaligned { lane: usize, addr: i64 },
    #[error("scatter element size {0} is not 1, 2 or 4")]
    BadElemSize(usize),
    #[error("{what} has {got} lanes, expected {expected}")]
    LaneCount { what: &'static str, expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SurfaceKind {
    Image2d,
    Buffer,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Surface {
    Image2d { width_bytes: usize, height: usize, data: Vec<u8> },
    Buffer { data: Vec<u8> },
}

impl Surface {
    pub fn image(width_bytes: usize, height: usize, data: Vec<u8>) -> Result<Surface, MemError> {
        if data.len() != width_bytes * height {
            return Err(MemError::Geometry { expected: width_bytes * height, got: data.len() });
        }
        Ok(Surface::Image2d { width_bytes, height, data })
    }

    pub fn zeroed_image(width_bytes: usize, height: usize) -> Surface {
        Surface::Image2d { width_bytes, height, data: vec![0; width_bytes * height] }
    }

    pub fn buffer(data: Vec<u8>) -> Surface {
        Surface::Buffer { data }
    }

    pub fn kind(&self) -> SurfaceKind {
        match self {
            Surface::Image2d { .. } => SurfaceKind::Image2d,
            Surface::Buffer { .. } => SurfaceKind::Buffer,
        }
    }

    pub fn bytes(&self) -> &[u8] {
        match self {
            Surface::Image2d { data, .. } | Surface::Buffer { data } => data,
        }
    }

    pub fn bytes_mut(&mut self) -> &mut [u8] {
        match self {
            Surface::Image2d { data, .. } | Surface::Buffer { data } => data,
        }
    }

    fn buffer_data(&self, op: &'static str) -> Result<&[u8], MemError> {
        match self {
            Surface::Buffer { data } => Ok(data),
            _ => Err(MemError::WrongKind { op, expected: "buffer" }),
        }
    }

    fn buffer_data_mut(&mut self, op: &'static str) -> Result<&mut Vec<u8>, MemError> {
        match self {
            Surface::Buffer { data } => Ok(data),
            _ => Err(MemError::WrongKind { op, expected: "buffer" }),
        }
    }
}

fn check_block(w_bytes: usize, h_rows: usize) -> Result<(), MemError> {
    if w_bytes == 0 || h_rows == 0 || w_bytes > 64 || h_rows > 16 {
        return Err(MemError::BlockTooLarge { w_bytes, h_rows });
    }
    Ok(())
}

/// Reads an `h_rows` x `w_bytes` block at byte column `x`, row `y`, packed
/// row-major. Coordinates outside the image are clamped to the nearest edge.
pub fn media_block_read(
    s: &Surface,
    x: i64,
    y: i64,
    w_bytes: usize,
    h_rows: usize,
) -> Result<Vec<u8>, MemError> {
    check_block(w_bytes, h_rows)?;
    let Surface::Image2d { width_bytes, height, data } = s else {
        return Err(MemError::WrongKind { op: "media block read", expected: "image2d" });
    };
    let mut out = Vec::with_capacity(w_bytes * h_rows);
    for r in 0..h_rows as i64 {
        let row = (y + r).clamp(0, *height as i64 - 1) as usize;
        for c in 0..w_bytes as i64 {
            let col = (x + c).clamp(0, *width_bytes as i64 - 1) as usize;
            out.push(data[row * width_bytes + col]);
        }
    }
    Ok(out)
}

/// Writes a packed block; bytes falling outside the image are dropped.
pub fn media_block_write(
    s: &mut Surface,
    x: i64,
    y: i64,
    w_bytes: usize,
    h_rows: usize,
    block: &[u8],
) -> Result<(), MemError> {
    check_block(w_bytes, h_rows)?;
    if block.len() != w_bytes * h_rows {
        return Err(MemError::LaneCount { what: "media block payload", expected: w_bytes * h_rows, got: block.len() });
    }
    let Surface::Image2d { width_bytes, height, data } = s else {
        return Err(MemError::WrongKind { op: "media block write", expected: "image2d" });
    };
    for r in 0..h_rows {
        let row = y + r as i64;
        if row < 0 || row >= *height as i64 {
            continue;
        }
        for c in 0..w_bytes {
            let col = x + c as i64;
            if col < 0 || col >= *width_bytes as i64 {
                continue;
            }
            data[row as usize * *width_bytes + col as usize] = block[r * w_bytes + c];
        }
    }
    Ok(())
}

fn check_oword(offset: i64, n_bytes: usize, len: usize) -> Result<(), MemError> {
    if ![16, 32, 64, 128].contains(&n_bytes) {
        return Err(MemError::BadOwordSize { n_bytes });
    }
    if offset.rem_euclid(16) != 0 {
        return Err(MemError::Misaligned { offset });
    }
    if offset < 0 || offset as usize + n_bytes > len {
        return Err(MemError::OutOfBounds { offset, size: n_bytes, len });
    }
    Ok(())
}

pub fn oword_read(s: &Surface, offset: i64, n_bytes: usize) -> Result<Vec<u8>, MemError> {
    let data = s.buffer_data("oword block read")?;
    check_oword(offset, n_bytes, data.len())?;
    Ok(data[offset as usize..offset as usize + n_bytes].to_vec())
}

pub fn oword_write(s: &mut Surface, offset: i64, payload: &[u8]) -> Result<(), MemError> {
    let data = s.buffer_data_mut("oword block write")?;
    check_oword(offset, payload.len(), data.len())?;
    data[offset as usize..offset as usize + payload.len()].copy_from_slice(payload);
    Ok(())
}

fn check_lanes(offsets: &[i64], mask: &[bool]) -> Result<(), MemError> {
    if mask.len() != offsets.len() {
        return Err(MemError::LaneCount { what: "execution mask", expected: offsets.len(), got: mask.len() });
    }
    Ok(())
}

fn lane_addr(global: i64, off: i64, lane: usize, size: usize, len: usize) -> Result<usize, MemError> {
    let addr = global + off;
    if addr < 0 || addr as usize + size > len {
        return Err(MemError::LaneOutOfBounds { lane, addr, len });
    }
    Ok(addr as usize)
}

/// Per-lane element load at `global + offsets[k]` (bytes). Inactive lanes
/// produce zero bytes.
pub fn scatter_read(
    s: &Surface,
    global: i64,
    offsets: &[i64],
    elem_size: usize,
    mask: &[bool],
) -> Result<Vec<u8>, MemError> {
    if ![1, 2, 4].contains(&elem_size) {
        return Err(MemError::BadElemSize(elem_size));
    }
    check_lanes(offsets, mask)?;
    let data = s.buffer_data("scattered read")?;
    let mut out = vec![0u8; offsets.len() * elem_size];
    for (k, (&off, &active)) in offsets.iter().zip(mask).enumerate() {
        if active {
            let a = lane_addr(global, off, k, elem_size, data.len())?;
            out[k * elem_size..(k + 1) * elem_size].copy_from_slice(&data[a..a + elem_size]);
        }
    }
    Ok(out)
}

/// Per-lane element store; with duplicate addresses the highest lane wins.
pub fn scatter_write(
    s: &mut Surface,
    global: i64,
    offsets: &[i64],
    elem_size: usize,
    payload: &[u8],
    mask: &[bool],
) -> Result<(), MemError> {
    if ![1, 2, 4].contains(&elem_size) {
        return Err(MemError::BadElemSize(elem_size));
    }
    check_lanes(offsets, mask)?;
    if payload.len() != offsets.len() * elem_size {
        return Err(MemError::LaneCount {
            what: "scatter payload",
            expected: offsets.len() * elem_size,
            got: payload.len(),
        });
    }
    let data = s.buffer_data_mut("scattered write")?;
    for (k, (&off, &active)) in offsets.iter().zip(mask).enumerate() {
        if active {
            let a = lane_addr(global, off, k, elem_size, data.len())?;
            data[a..a + elem_size].copy_from_slice(&payload[k * elem_size..(k + 1) * elem_size]);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AtomicOp {
    Add,
    Sub,
    Inc,
    Dec,
    And,
    Or,
    Xor,
    Min,
    Max,
    Cmpxchg,
}

impl AtomicOp {
    pub const ALL: [AtomicOp; 10] = [
        AtomicOp::Add,
        AtomicOp::Sub,
        AtomicOp::Inc,
        AtomicOp::Dec,
        AtomicOp::And,
        AtomicOp::Or,
        AtomicOp::Xor,
        AtomicOp::Min,
        AtomicOp::Max,
        AtomicOp::Cmpxchg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AtomicOp::Add => "add",
            AtomicOp::Sub => "sub",
            AtomicOp::Inc => "inc",
            AtomicOp::Dec => "dec",
            AtomicOp::And => "and",
            AtomicOp::Or => "or",
            AtomicOp::Xor => "xor",
            AtomicOp::Min => "min",
            AtomicOp::Max => "max",
            AtomicOp::Cmpxchg => "cmpxchg",
        }
    }

    pub fn from_name(s: &str) -> Option<AtomicOp> {
        let s = s.to_ascii_lowercase();
        AtomicOp::ALL.into_iter().find(|o| o.name() == s)
    }

    /// Number of per-lane source operands.
    pub fn num_sources(self) -> usize {
        match self {
            AtomicOp::Inc | AtomicOp::Dec => 0,
            AtomicOp::Cmpxchg => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for AtomicOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Dword read-modify-write per active lane in ascending lane order. Returns
/// the pre-operation value for each lane (zero for inactive lanes).
/// `min`/`max` compare as signed 32-bit; `cmpxchg` stores `src1` when the
/// memory value equals `src0`.
pub fn atomic(
    s: &mut Surface,
    op: AtomicOp,
    offsets: &[i64],
    src0: &[u32],
    src1: &[u32],
    mask: &[bool],
) -> Result<Vec<u32>, MemError> {
    check_lanes(offsets, mask)?;
    let n = offsets.len();
    if op.num_sources() >= 1 && src0.len() != n {
        return Err(MemError::LaneCount { what: "atomic source 0", expected: n, got: src0.len() });
    }
    if op.num_sources() >= 2 && src1.len() != n {
        return Err(MemError::LaneCount { what: "atomic source 1", expected: n, got: src1.len() });
    }
    let data = s.buffer_data_mut("atomic")?;
    let mut old = vec![0u32; n];
    for k in 0..n {
        if !mask[k] {
            continue;
        }
        let a = lane_addr(0, offsets[k], k, 4, data.len())?;
        if a % 4 != 0 {
            return Err(MemError::AtomicMisaligned { lane: k, addr: a as i64 });
        }
        let cur = u32::from_le_bytes(data[a..a + 4].try_into().unwrap());
        let x = src0.get(k).copied().unwrap_or(0);
        let new = match op {
            AtomicOp::Add => cur.wrapping_add(x),
            AtomicOp::Sub => cur.wrapping_sub(x),
            AtomicOp::Inc => cur.wrapping_add(1),
            AtomicOp::Dec => cur.wrapping_sub(1),
            AtomicOp::And => cur & x,
            AtomicOp::Or => cur | x,
            AtomicOp::Xor => cur ^ x,
            AtomicOp::Min => (cur as i32).min(x as i32) as u32,
            AtomicOp::Max => (cur as i32).max(x as i32) as u32,
            AtomicOp::Cmpxchg => {
                if cur == x {
                    src1[k]
                } else {
                    cur
                }
            }
        };
        data[a..a + 4].copy_from_slice(&new.to_le_bytes());
        old[k] = cur;
    }
    Ok(old)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dwords(vals: &[u32]) -> Vec<u8> {
        vals.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn media_read_whole_image() {
        let data: Vec<u8> = (0..=255).collect();
        let img = Surface::image(32, 8, data.clone()).unwrap();
        assert_eq!(media_block_read(&img, 0, 0, 32, 8).unwrap(), data);
    }

    #[test]
    fn media_read_clamps_left_edge() {
        let data: Vec<u8> = (0..64).collect();
        let img = Surface::image(16, 4, data).unwrap();
        let a = media_block_read(&img, -1, 0, 4, 2).unwrap();
        let b = media_block_read(&img, 0, 0, 4, 2).unwrap();
        assert_eq!(a[0], b[0]);
        assert_eq!(a[4], b[4]);
        assert_eq!(&a[1..4], &b[0..3]);
        // bottom-right corner replicates
        let c = media_block_read(&img, 14, 3, 4, 2).unwrap();
        assert_eq!(c, vec![62, 63, 63, 63, 62, 63, 63, 63]);
    }

    #[test]
    fn media_write_clips() {
        let mut img = Surface::zeroed_image(4, 2);
        media_block_write(&mut img, 2, 1, 4, 2, &[1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        assert_eq!(img.bytes(), &[0, 0, 0, 0, 0, 0, 1, 2]);
        let mut buf = Surface::buffer(vec![0; 16]);
        assert!(matches!(
            media_block_read(&buf, 0, 0, 4, 1),
            Err(MemError::WrongKind { .. })
        ));
        assert!(media_block_write(&mut buf, 0, 0, 4, 1, &[0; 4]).is_err());
    }

    #[test]
    fn oword_access() {
        let data: Vec<u8> = (0..64).collect();
        let mut buf = Surface::buffer(data);
        assert_eq!(oword_read(&buf, 16, 32).unwrap(), (16..48).collect::<Vec<u8>>());
        assert_eq!(oword_read(&buf, 8, 16), Err(MemError::Misaligned { offset: 8 }));
        assert!(matches!(oword_read(&buf, 48, 32), Err(MemError::OutOfBounds { .. })));
        assert_eq!(oword_read(&buf, 0, 48), Err(MemError::BadOwordSize { n_bytes: 48 }));
        oword_write(&mut buf, 32, &[7; 16]).unwrap();
        assert_eq!(oword_read(&buf, 32, 16).unwrap(), vec![7; 16]);
    }

    #[test]
    fn scatter_aliased_gather() {
        let buf = Surface::buffer(dwords(&[10, 11, 12, 13]));
        let got = scatter_read(&buf, 0, &[0, 4, 8, 8], 4, &[true; 4]).unwrap();
        assert_eq!(got, dwords(&[10, 11, 12, 12]));
        let got = scatter_read(&buf, 4, &[0, 4, 400, 8], 4, &[true, true, false, true]).unwrap();
        assert_eq!(got, dwords(&[11, 12, 0, 13]));
        let err = scatter_read(&buf, 0, &[0, 16], 4, &[true, true]).unwrap_err();
        assert!(matches!(err, MemError::LaneOutOfBounds { lane: 1, .. }));
    }

    #[test]
    fn scatter_write_highest_lane_wins() {
        let mut buf = Surface::buffer(vec![0; 16]);
        scatter_write(&mut buf, 0, &[4, 4, 4, 0], 4, &dwords(&[1, 2, 3, 4]), &[true, true, true, false])
            .unwrap();
        assert_eq!(buf.bytes(), &dwords(&[0, 3, 0, 0])[..]);
        let before = buf.clone();
        scatter_write(&mut buf, 0, &[0, 4], 4, &dwords(&[9, 9]), &[false, false]).unwrap();
        assert_eq!(buf, before);
    }

    #[test]
    fn atomic_inc_ascending_lanes() {
        let mut buf = Surface::buffer(vec![0; 4]);
        let old = atomic(&mut buf, AtomicOp::Inc, &[0; 16], &[], &[], &[true; 16]).unwrap();
        assert_eq!(old, (0..16).collect::<Vec<u32>>());
        assert_eq!(buf.bytes(), &16u32.to_le_bytes());
    }

    #[test]
    fn atomic_max_sequential() {
        let mut buf = Surface::buffer(dwords(&[5]));
        let old = atomic(&mut buf, AtomicOp::Max, &[0, 0], &[3, 9], &[], &[true, true]).unwrap();
        assert_eq!(old, vec![5, 5]);
        assert_eq!(buf.bytes(), &dwords(&[9])[..]);
    }

    #[test]
    fn atomic_single_lane_add_and_cmpxchg() {
        let mut buf = Surface::buffer(dwords(&[1, 2]));
        let old = atomic(&mut buf, AtomicOp::Add, &[0, 4], &[10, 10], &[], &[true, false]).unwrap();
        assert_eq!(old, vec![1, 0]);
        assert_eq!(buf.bytes(), &dwords(&[11, 2])[..]);
        let old = atomic(&mut buf, AtomicOp::Cmpxchg, &[4, 4], &[2, 2], &[7, 8], &[true, true]).unwrap();
        assert_eq!(old, vec![2, 7]);
        assert_eq!(buf.bytes(), &dwords(&[11, 7])[..]);
    }
}
