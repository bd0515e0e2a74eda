//! Exhaustive maximal-empty-box enumeration for small grids.
//!
//! Used to check [`super::ems_update`]; it shares no code with the
//! difference process.

use super::{BinDims, Ems, GeometryError, Result};

pub const MAX_ORACLE_SIDE: u32 = 8;

/// Prefix-summed occupancy for O(1) box emptiness queries.
struct Prefix {
    l: usize,
    w: usize,
    sums: Vec<u32>,
}

impl Prefix {
    fn new(dims: BinDims, occupied: &[bool]) -> Self {
        let (l, w, h) = (dims.l as usize, dims.w as usize, dims.h as usize);
        let (pl, pw) = (l + 1, w + 1);
        let mut sums = vec![0u32; pl * pw * (h + 1)];
        let at = |x: usize, y: usize, z: usize| x + pl * (y + pw * z);
        for z in 1..=h {
            for y in 1..=w {
                for x in 1..=l {
                    let cell = occupied[(x - 1) + l * ((y - 1) + w * (z - 1))] as i64;
                    let v = cell
                        + sums[at(x - 1, y, z)] as i64
                        + sums[at(x, y - 1, z)] as i64
                        + sums[at(x, y, z - 1)] as i64
                        - sums[at(x - 1, y - 1, z)] as i64
                        - sums[at(x - 1, y, z - 1)] as i64
                        - sums[at(x, y - 1, z - 1)] as i64
                        + sums[at(x - 1, y - 1, z - 1)] as i64;
                    sums[at(x, y, z)] = v as u32;
                }
            }
        }
        Self { l, w, sums }
    }

    fn get(&self, x: u32, y: u32, z: u32) -> i64 {
        self.sums[x as usize + (self.l + 1) * (y as usize + (self.w + 1) * z as usize)] as i64
    }

    /// Occupied cells in `[lo, hi)`.
    fn count(&self, lo: [u32; 3], hi: [u32; 3]) -> i64 {
        let [x0, y0, z0] = lo;
        let [x1, y1, z1] = hi;
        self.get(x1, y1, z1) - self.get(x0, y1, z1) - self.get(x1, y0, z1) - self.get(x1, y1, z0)
            + self.get(x0, y0, z1)
            + self.get(x0, y1, z0)
            + self.get(x1, y0, z0)
            - self.get(x0, y0, z0)
    }
}

/// Every maximal empty axis-aligned box of an occupancy grid indexed
/// `x + L * (y + W * z)`, in sorted order.
///
/// Enumerates all `O(L²W²H²)` boxes, so grids are limited to 8×8×8.
pub fn maximal_empty_boxes(dims: BinDims, occupied: &[bool]) -> Result<Vec<Ems>> {
    if dims.l > MAX_ORACLE_SIDE || dims.w > MAX_ORACLE_SIDE || dims.h > MAX_ORACLE_SIDE {
        return Err(GeometryError::OracleTooLarge(dims));
    }
    assert_eq!(occupied.len() as u64, dims.volume(), "occupancy grid size mismatch");
    let prefix = Prefix::new(dims, occupied);
    let size = dims.as_array();
    let mut out = Vec::new();
    for x0 in 0..size[0] {
        for x1 in x0 + 1..=size[0] {
            for y0 in 0..size[1] {
                for y1 in y0 + 1..=size[1] {
                    for z0 in 0..size[2] {
                        for z1 in z0 + 1..=size[2] {
                            let lo = [x0, y0, z0];
                            let hi = [x1, y1, z1];
                            if prefix.count(lo, hi) != 0 {
                                continue;
                            }
                            if is_blocked_everywhere(&prefix, size, lo, hi) {
                                out.push(Ems::new(lo, hi));
                            }
                        }
                    }
                }
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// True if growing the empty box by one layer on any side would hit a wall
/// or an occupied cell.
fn is_blocked_everywhere(prefix: &Prefix, size: [u32; 3], lo: [u32; 3], hi: [u32; 3]) -> bool {
    for axis in 0..3 {
        if lo[axis] > 0 {
            let (mut slo, mut shi) = (lo, hi);
            slo[axis] = lo[axis] - 1;
            shi[axis] = lo[axis];
            if prefix.count(slo, shi) == 0 {
                return false;
            }
        }
        if hi[axis] < size[axis] {
            let (mut slo, mut shi) = (lo, hi);
            slo[axis] = hi[axis];
            shi[axis] = hi[axis] + 1;
            if prefix.count(slo, shi) == 0 {
                return false;
            }
        }
    }
    true
}
