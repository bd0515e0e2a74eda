//! Items, graspable faces, surface categories, time-cost profiles, item
//! streams and the selection buffer.

use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::ops::{Index, IndexMut};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BinDims, Extents};
use crate::rng::SimRng;

#[derive(Debug, Error)]
pub enum ItemError {
    #[error("invalid item size range [{lo}, {hi}]")]
    InvalidRange { lo: u32, hi: u32 },
    #[error("variable-item fraction {fraction} is unattainable with sizes in [{lo}, {hi}]")]
    UnattainableFraction { fraction: f64, lo: u32, hi: u32 },
    #[error("item stream io: {0}")]
    Io(#[from] std::io::Error),
    #[error("item stream line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// The five graspable faces, in the fixed unit order used for action indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Face {
    Top,
    Front,
    Back,
    Left,
    Right,
}

impl Face {
    pub const ALL: [Face; 5] = [Face::Top, Face::Front, Face::Back, Face::Left, Face::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Face::Top => "top",
            Face::Front => "front",
            Face::Back => "back",
            Face::Left => "left",
            Face::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Face> {
        Face::ALL.into_iter().find(|f| f.name().eq_ignore_ascii_case(s))
    }
}

/// Surface finish of one face; drives the transport penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceCategory {
    Smooth,
    Taped,
    Labeled,
}

impl SurfaceCategory {
    pub const ALL: [SurfaceCategory; 3] =
        [SurfaceCategory::Smooth, SurfaceCategory::Taped, SurfaceCategory::Labeled];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One value per face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PerFace<T> {
    pub top: T,
    pub front: T,
    pub back: T,
    pub left: T,
    pub right: T,
}

impl<T: Copy> PerFace<T> {
    pub fn splat(v: T) -> Self {
        Self { top: v, front: v, back: v, left: v, right: v }
    }

    pub fn values(&self) -> [T; 5] {
        [self.top, self.front, self.back, self.left, self.right]
    }
}

impl<T> Index<Face> for PerFace<T> {
    type Output = T;
    fn index(&self, f: Face) -> &T {
        match f {
            Face::Top => &self.top,
            Face::Front => &self.front,
            Face::Back => &self.back,
            Face::Left => &self.left,
            Face::Right => &self.right,
        }
    }
}

impl<T> IndexMut<Face> for PerFace<T> {
    fn index_mut(&mut self, f: Face) -> &mut T {
        match f {
            Face::Top => &mut self.top,
            Face::Front => &mut self.front,
            Face::Back => &mut self.back,
            Face::Left => &mut self.left,
            Face::Right => &mut self.right,
        }
    }
}

/// Which faces a policy or environment may use.
pub type FaceMask = PerFace<bool>;

impl FaceMask {
    pub fn all() -> Self {
        Self::splat(true)
    }

    pub fn only(faces: &[Face]) -> Self {
        let mut m = Self::splat(false);
        for &f in faces {
            m[f] = true;
        }
        m
    }

    pub fn allows(&self, f: Face) -> bool {
        self[f]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCosts {
    pub smooth: f64,
    pub taped: f64,
    pub labeled: f64,
}

impl Index<SurfaceCategory> for SurfaceCosts {
    type Output = f64;
    fn index(&self, s: SurfaceCategory) -> &f64 {
        match s {
            SurfaceCategory::Smooth => &self.smooth,
            SurfaceCategory::Taped => &self.taped,
            SurfaceCategory::Labeled => &self.labeled,
        }
    }
}

/// Reorientation cost per face plus transport cost per surface category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeCostProfile {
    pub name: String,
    pub reorient: PerFace<f64>,
    pub surface: SurfaceCosts,
}

impl TimeCostProfile {
    /// Unit penalties used in simulation: front 1, sides 2, back 3; smooth 0,
    /// taped 2, labeled 4.
    pub fn simulation() -> Self {
        Self {
            name: "simulation".into(),
            reorient: PerFace { top: 0.0, front: 1.0, back: 3.0, left: 2.0, right: 2.0 },
            surface: SurfaceCosts { smooth: 0.0, taped: 2.0, labeled: 4.0 },
        }
    }

    /// Seconds measured on the physical cell. Back-face grasps were
    /// kinematically infeasible there and carry a 100 s penalty.
    pub fn robot() -> Self {
        Self {
            name: "robot".into(),
            reorient: PerFace { top: 0.0, front: 6.0, back: 100.0, left: 12.0, right: 12.0 },
            surface: SurfaceCosts { smooth: 3.0, taped: 6.0, labeled: 10.0 },
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "simulation" => Some(Self::simulation()),
            "robot" => Some(Self::robot()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = self
            .reorient
            .values()
            .into_iter()
            .chain([self.surface.smooth, self.surface.taped, self.surface.labeled]);
        for v in all {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("time profile '{}' has invalid entry {v}", self.name));
            }
        }
        Ok(())
    }

    /// Largest single-placement time under this profile; the time reward is
    /// normalised by it.
    pub fn max_time(&self) -> f64 {
        let r = self.reorient.values().into_iter().fold(0.0, f64::max);
        let s = [self.surface.smooth, self.surface.taped, self.surface.labeled]
            .into_iter()
            .fold(0.0, f64::max);
        r + s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: u64,
    /// `(l, w, h)` in the conveyor camera frame.
    pub dims: [u32; 3],
    pub surface: PerFace<SurfaceCategory>,
}

impl Item {
    pub fn new(id: u64, l: u32, w: u32, h: u32, surface: PerFace<SurfaceCategory>) -> Self {
        Self { id, dims: [l, w, h], surface }
    }

    pub fn volume(&self) -> u64 {
        self.dims.iter().map(|&d| d as u64).product()
    }
}

/// Extents of the item in the bin when `face` is grasped and becomes the top.
pub fn face_dims(item: &Item, face: Face) -> Extents {
    let [l, w, h] = item.dims;
    match face {
        Face::Top => Extents::new(l, w, h),
        Face::Front | Face::Back => Extents::new(l, h, w),
        Face::Left | Face::Right => Extents::new(w, h, l),
    }
}

/// `t_f + e_{i,f}`: reorientation plus surface-dependent transport time.
pub fn op_time(item: &Item, face: Face, profile: &TimeCostProfile) -> f64 {
    profile.reorient[face] + profile.surface[item.surface[face]]
}

/// Item size range `[min/10, min/2]` (floored, at least 1) for a bin.
pub fn default_item_range(bin: BinDims) -> (u32, u32) {
    let m = bin.min_side();
    ((m / 10).max(1), (m / 2).max(1))
}

fn check_range(lo: u32, hi: u32) -> Result<(), ItemError> {
    if lo == 0 || lo > hi {
        return Err(ItemError::InvalidRange { lo, hi });
    }
    Ok(())
}

/// Draws one item with i.i.d. uniform dimensions in `[lo, hi]` and an
/// independent uniform surface category per face.
pub fn sample_item(rng: &mut SimRng, id: u64, lo: u32, hi: u32) -> Result<Item, ItemError> {
    check_range(lo, hi)?;
    let dims = [rng.gen_range(lo..=hi), rng.gen_range(lo..=hi), rng.gen_range(lo..=hi)];
    let mut surface = PerFace::splat(SurfaceCategory::Smooth);
    for f in Face::ALL {
        surface[f] = SurfaceCategory::ALL[rng.gen_range(0..3)];
    }
    Ok(Item { id, dims, surface })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variability {
    Uniform,
    Variable,
    Other,
}

/// Uniform if all sides are within two units, Variable if some pair differs
/// by three or more. Uniform is checked first.
pub fn classify_variability(item: &Item) -> Variability {
    let max = *item.dims.iter().max().unwrap();
    let min = *item.dims.iter().min().unwrap();
    let spread = max - min;
    if spread <= 2 {
        Variability::Uniform
    } else if spread >= 3 {
        Variability::Variable
    } else {
        Variability::Other
    }
}

/// Parameters of a sampled item stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub lo: u32,
    pub hi: u32,
    /// Probability that each item is drawn from the Variable class
    /// (rejection sampling). `None` samples sizes directly.
    #[serde(default)]
    pub variable_fraction: Option<f64>,
    /// Number of items before the stream runs dry; `None` is unbounded.
    #[serde(default)]
    pub length: Option<usize>,
}

impl StreamSpec {
    pub fn new(lo: u32, hi: u32) -> Self {
        Self { lo, hi, variable_fraction: None, length: None }
    }

    pub fn validate(&self) -> Result<(), ItemError> {
        check_range(self.lo, self.hi)?;
        if let Some(f) = self.variable_fraction {
            let unattainable = !(0.0..=1.0).contains(&f) || (f > 0.0 && self.hi - self.lo < 3);
            if unattainable {
                return Err(ItemError::UnattainableFraction { fraction: f, lo: self.lo, hi: self.hi });
            }
        }
        Ok(())
    }
}

/// Source of arriving items.
#[derive(Debug, Clone)]
pub enum ItemStream {
    Sampled { spec: StreamSpec, rng: SimRng, next_id: u64 },
    /// A fixed, known sequence (replays, tests).
    Replay(VecDeque<Item>),
}

impl ItemStream {
    pub fn sampled(spec: StreamSpec, rng: SimRng) -> Result<Self, ItemError> {
        spec.validate()?;
        Ok(Self::Sampled { spec, rng, next_id: 0 })
    }

    pub fn replay(items: impl IntoIterator<Item = Item>) -> Self {
        Self::Replay(items.into_iter().collect())
    }

    pub fn is_sampled(&self) -> bool {
        matches!(self, Self::Sampled { .. })
    }

    /// Replaces the generator of a sampled stream; replays are unaffected.
    pub fn reseed(&mut self, new_rng: SimRng) {
        if let Self::Sampled { rng, .. } = self {
            *rng = new_rng;
        }
    }

    pub fn next_item(&mut self) -> Option<Item> {
        match self {
            Self::Replay(q) => q.pop_front(),
            Self::Sampled { spec, rng, next_id } => {
                if spec.length.is_some_and(|n| *next_id as usize >= n) {
                    return None;
                }
                let id = *next_id;
                *next_id += 1;
                let item = match spec.variable_fraction {
                    None => sample_item(rng, id, spec.lo, spec.hi),
                    Some(f) => {
                        let want = if rng.gen_bool(f) {
                            Variability::Variable
                        } else {
                            Variability::Uniform
                        };
                        loop {
                            let it = sample_item(rng, id, spec.lo, spec.hi);
                            match it {
                                Ok(it) if classify_variability(&it) != want => continue,
                                other => break other,
                            }
                        }
                    }
                };
                // validated on construction
                Some(item.expect("stream spec validated"))
            }
        }
    }
}

/// The `N` items currently visible for selection.
#[derive(Debug, Clone)]
pub struct Buffer {
    slots: Vec<Item>,
    stream: ItemStream,
}

impl Buffer {
    pub fn new(mut stream: ItemStream, capacity: usize) -> Self {
        let slots = std::iter::from_fn(|| stream.next_item()).take(capacity).collect();
        Self { slots, stream }
    }

    pub fn slots(&self) -> &[Item] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn stream_mut(&mut self) -> &mut ItemStream {
        &mut self.stream
    }

    /// Removes the item in `slot` and refills that slot from the stream. If
    /// the stream is exhausted the buffer shrinks instead.
    pub fn take(&mut self, slot: usize) -> Item {
        match self.stream.next_item() {
            Some(next) => std::mem::replace(&mut self.slots[slot], next),
            None => self.slots.remove(slot),
        }
    }
}

pub fn write_items_jsonl<W: Write>(items: &[Item], mut out: W) -> Result<(), ItemError> {
    for it in items {
        serde_json::to_writer(&mut out, it).map_err(|e| ItemError::Parse { line: 0, source: e })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_items_jsonl<R: BufRead>(input: R) -> Result<Vec<Item>, ItemError> {
    let mut items = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(
            serde_json::from_str(&line).map_err(|e| ItemError::Parse { line: i + 1, source: e })?,
        );
    }
    Ok(items)
}
