//! Discrete bin geometry.
//!
//! The bin is an `L × W × H` grid of unit cells with the front-left-bottom
//! corner at the origin; `x` runs along `L`, `y` along `W` and `z` along `H`.
//! Boxes always rest at the height returned by [`BinState::drop_z`], so the
//! height map is enough to resolve gravity, while the free space (including
//! voids under overhangs) is tracked as a set of empty maximal spaces.

mod ems;
pub mod oracle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ems::{ems_encode, ems_update};

/// Minimum fraction of the footprint that must rest on supporting columns.
pub const SUPPORT_RATIO: f64 = 0.6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeometryError {
    #[error("bin dimensions must be positive, got {0:?}")]
    InvalidBin(BinDims),
    #[error("box extents must be positive, got {0:?}")]
    InvalidExtents(Extents),
    #[error("footprint {dims:?} at ({x}, {y}) leaves the bin base")]
    OutOfBounds { dims: Extents, x: u32, y: u32 },
    #[error("box {dims:?} at {flb:?} exceeds the bin height")]
    HeightOverflow { dims: Extents, flb: Flb },
    #[error("box {dims:?} at {flb:?} overlaps placed boxes (resting height is {rest})")]
    Overlap { dims: Extents, flb: Flb, rest: u32 },
    #[error("box {dims:?} at {flb:?} floats above its resting height {rest}")]
    Floating { dims: Extents, flb: Flb, rest: u32 },
    #[error("box {dims:?} at {flb:?} is not statically stable")]
    Unstable { dims: Extents, flb: Flb },
    #[error("oracle grid {0:?} is larger than 8x8x8")]
    OracleTooLarge(BinDims),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Bin size in cells along X, Y, Z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinDims {
    pub l: u32,
    pub w: u32,
    pub h: u32,
}

impl BinDims {
    pub fn new(l: u32, w: u32, h: u32) -> Result<Self> {
        let dims = Self { l, w, h };
        if l == 0 || w == 0 || h == 0 {
            return Err(GeometryError::InvalidBin(dims));
        }
        Ok(dims)
    }

    pub fn cube(side: u32) -> Result<Self> {
        Self::new(side, side, side)
    }

    pub fn volume(&self) -> u64 {
        self.l as u64 * self.w as u64 * self.h as u64
    }

    pub fn as_array(&self) -> [u32; 3] {
        [self.l, self.w, self.h]
    }

    pub fn min_side(&self) -> u32 {
        self.l.min(self.w).min(self.h)
    }
}

/// Axis-aligned box extents `(dx, dy, dz)` in cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Extents {
    pub dx: u32,
    pub dy: u32,
    pub dz: u32,
}

impl Extents {
    pub const fn new(dx: u32, dy: u32, dz: u32) -> Self {
        Self { dx, dy, dz }
    }

    pub fn volume(&self) -> u64 {
        self.dx as u64 * self.dy as u64 * self.dz as u64
    }

    /// The 90° in-plane rotation about the vertical axis.
    pub fn rotated(&self) -> Self {
        Self::new(self.dy, self.dx, self.dz)
    }

    pub fn is_positive(&self) -> bool {
        self.dx > 0 && self.dy > 0 && self.dz > 0
    }

    pub fn as_array(&self) -> [u32; 3] {
        [self.dx, self.dy, self.dz]
    }
}

/// Front-left-bottom corner of a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Flb {
    pub x: u32,
    pub y: u32,
    pub z: u32,
}

impl Flb {
    pub const fn new(x: u32, y: u32, z: u32) -> Self {
        Self { x, y, z }
    }

    pub fn as_array(&self) -> [u32; 3] {
        [self.x, self.y, self.z]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacedBox {
    pub flb: Flb,
    pub dims: Extents,
    pub item_id: u64,
}

impl PlacedBox {
    pub fn volume(&self) -> u64 {
        self.dims.volume()
    }

    pub fn as_space(&self) -> Ems {
        let lo = self.flb.as_array();
        let d = self.dims.as_array();
        Ems {
            lo,
            hi: [lo[0] + d[0], lo[1] + d[1], lo[2] + d[2]],
        }
    }
}

/// An empty maximal space: `lo` is inclusive, `hi` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Ems {
    pub lo: [u32; 3],
    pub hi: [u32; 3],
}

impl Ems {
    pub const fn new(lo: [u32; 3], hi: [u32; 3]) -> Self {
        Self { lo, hi }
    }

    pub fn whole(dims: BinDims) -> Self {
        Self::new([0, 0, 0], dims.as_array())
    }

    pub fn volume(&self) -> u64 {
        (0..3).map(|a| (self.hi[a] - self.lo[a]) as u64).product()
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|a| self.hi[a] <= self.lo[a])
    }

    pub fn intersects(&self, other: &Ems) -> bool {
        (0..3).all(|a| self.lo[a] < other.hi[a] && other.lo[a] < self.hi[a])
    }

    pub fn contains(&self, other: &Ems) -> bool {
        (0..3).all(|a| self.lo[a] <= other.lo[a] && other.hi[a] <= self.hi[a])
    }
}

/// One bin: height map, placed boxes and the current EMS set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinState {
    dims: BinDims,
    /// Column heights, row-major over `y` then `x` (`W × L`).
    height_map: Vec<u32>,
    placed: Vec<PlacedBox>,
    ems: Vec<Ems>,
    packed_volume: u64,
}

impl BinState {
    pub fn new(dims: BinDims) -> Self {
        Self {
            dims,
            height_map: vec![0; (dims.l * dims.w) as usize],
            placed: Vec::new(),
            ems: vec![Ems::whole(dims)],
            packed_volume: 0,
        }
    }

    pub fn dims(&self) -> BinDims {
        self.dims
    }

    pub fn height_map(&self) -> &[u32] {
        &self.height_map
    }

    pub fn height_at(&self, x: u32, y: u32) -> u32 {
        self.height_map[(y * self.dims.l + x) as usize]
    }

    pub fn placed(&self) -> &[PlacedBox] {
        &self.placed
    }

    pub fn ems(&self) -> &[Ems] {
        &self.ems
    }

    pub fn packed_volume(&self) -> u64 {
        self.packed_volume
    }

    pub fn utilization(&self) -> f64 {
        self.packed_volume as f64 / self.dims.volume() as f64
    }

    pub fn max_height(&self) -> u32 {
        self.height_map.iter().copied().max().unwrap_or(0)
    }

    fn check_footprint(&self, dims: Extents, x: u32, y: u32) -> Result<()> {
        if !dims.is_positive() {
            return Err(GeometryError::InvalidExtents(dims));
        }
        if x as u64 + dims.dx as u64 > self.dims.l as u64
            || y as u64 + dims.dy as u64 > self.dims.w as u64
        {
            return Err(GeometryError::OutOfBounds { dims, x, y });
        }
        Ok(())
    }

    fn footprint_max(&self, dims: Extents, x: u32, y: u32) -> u32 {
        let l = self.dims.l as usize;
        let mut z = 0;
        for yy in y as usize..(y + dims.dy) as usize {
            let row = &self.height_map[yy * l + x as usize..yy * l + (x + dims.dx) as usize];
            z = row.iter().copied().fold(z, u32::max);
        }
        z
    }

    /// Resting height of a box dropped with its footprint at `(x, y)`.
    ///
    /// `Ok(None)` means the box would stick out of the top of the bin.
    pub fn drop_z(&self, dims: Extents, x: u32, y: u32) -> Result<Option<u32>> {
        self.check_footprint(dims, x, y)?;
        let z = self.footprint_max(dims, x, y);
        Ok((z + dims.dz <= self.dims.h).then_some(z))
    }

    /// Static stability of a box whose bottom face is at `flb.z`.
    ///
    /// Floor contact, at least [`SUPPORT_RATIO`] of the footprint resting on
    /// columns of height exactly `flb.z`, or all four bottom corners resting
    /// at that height.
    pub fn is_stable(&self, dims: Extents, flb: Flb) -> bool {
        if flb.z == 0 {
            return true;
        }
        if self.check_footprint(dims, flb.x, flb.y).is_err() {
            return false;
        }
        let mut supported = 0u64;
        for yy in flb.y..flb.y + dims.dy {
            for xx in flb.x..flb.x + dims.dx {
                if self.height_at(xx, yy) == flb.z {
                    supported += 1;
                }
            }
        }
        let area = dims.dx as u64 * dims.dy as u64;
        if supported as f64 >= SUPPORT_RATIO * area as f64 {
            return true;
        }
        let (x1, y1) = (flb.x + dims.dx - 1, flb.y + dims.dy - 1);
        [(flb.x, flb.y), (x1, flb.y), (flb.x, y1), (x1, y1)]
            .iter()
            .all(|&(cx, cy)| self.height_at(cx, cy) == flb.z)
    }

    /// Validates that `dims` may be placed at `flb`: in bounds, resting at its
    /// drop height and stable.
    pub fn check_placement(&self, dims: Extents, flb: Flb) -> Result<()> {
        self.check_footprint(dims, flb.x, flb.y)?;
        let rest = self.footprint_max(dims, flb.x, flb.y);
        if flb.z < rest {
            return Err(GeometryError::Overlap { dims, flb, rest });
        }
        if flb.z > rest {
            return Err(GeometryError::Floating { dims, flb, rest });
        }
        if flb.z as u64 + dims.dz as u64 > self.dims.h as u64 {
            return Err(GeometryError::HeightOverflow { dims, flb });
        }
        if !self.is_stable(dims, flb) {
            return Err(GeometryError::Unstable { dims, flb });
        }
        Ok(())
    }

    /// Places a box in this bin, updating the height map and EMS set.
    pub fn place(&mut self, dims: Extents, flb: Flb, item_id: u64) -> Result<()> {
        self.check_placement(dims, flb)?;
        let top = flb.z + dims.dz;
        let l = self.dims.l as usize;
        for yy in flb.y as usize..(flb.y + dims.dy) as usize {
            for cell in &mut self.height_map[yy * l + flb.x as usize..yy * l + (flb.x + dims.dx) as usize]
            {
                *cell = top;
            }
        }
        let placed = PlacedBox { flb, dims, item_id };
        self.ems = ems_update(&self.ems, &placed, self.dims);
        self.packed_volume += placed.volume();
        self.placed.push(placed);
        Ok(())
    }

    /// Copy-on-write variant of [`BinState::place`].
    pub fn apply_placement(&self, dims: Extents, flb: Flb, item_id: u64) -> Result<BinState> {
        let mut next = self.clone();
        next.place(dims, flb, item_id)?;
        Ok(next)
    }

    /// Cell occupancy grid, indexed `x + L * (y + W * z)`.
    pub fn occupancy(&self) -> Vec<bool> {
        let BinDims { l, w, h } = self.dims;
        let mut cells = vec![false; (l * w * h) as usize];
        for b in &self.placed {
            for z in b.flb.z..b.flb.z + b.dims.dz {
                for y in b.flb.y..b.flb.y + b.dims.dy {
                    for x in b.flb.x..b.flb.x + b.dims.dx {
                        cells[(x + l * (y + w * z)) as usize] = true;
                    }
                }
            }
        }
        cells
    }
}
