//! Placement: where an item goes once its face has been selected.
//!
//! Selection code only sees the [`PlacementPolicy`] trait, so any placer can
//! be plugged in. The default is deep-bottom-left-fill over EMS corners.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{BinState, Extents, Flb};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementDecision {
    pub flb: Flb,
    /// Box footprint rotated by 90° in-plane (`dx` and `dy` swapped).
    pub rot: bool,
    pub feasible: bool,
}

impl PlacementDecision {
    pub const INFEASIBLE: Self = Self { flb: Flb::new(0, 0, 0), rot: false, feasible: false };

    /// Extents actually occupied in the bin.
    pub fn placed_dims(&self, dims: Extents) -> Extents {
        if self.rot {
            dims.rotated()
        } else {
            dims
        }
    }
}

pub trait PlacementPolicy: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &str;

    /// Must be deterministic in `(bin, dims)`.
    fn place(&self, bin: &BinState, dims: Extents) -> PlacementDecision;
}

/// Candidate `(flb, rot)` positions: each EMS front-left corner, dropped
/// under gravity, kept if the box stays inside the bin and is stable.
pub fn feasible_positions(bin: &BinState, dims: Extents) -> Vec<(Flb, bool)> {
    let mut out = Vec::new();
    if !dims.is_positive() {
        return out;
    }
    for rot in [false, true] {
        let d = if rot { dims.rotated() } else { dims };
        let mut corners: Vec<(u32, u32)> = bin.ems().iter().map(|e| (e.lo[0], e.lo[1])).collect();
        corners.sort_unstable();
        corners.dedup();
        for (x, y) in corners {
            let Ok(Some(z)) = bin.drop_z(d, x, y) else {
                continue;
            };
            let flb = Flb::new(x, y, z);
            if bin.is_stable(d, flb) {
                out.push((flb, rot));
            }
        }
    }
    out
}

/// Deep-bottom-left-fill: lowest `z`, then `y`, then `x`. Between the two
/// rotations at the same corner the tighter fit wins (smallest hosting EMS),
/// then the unrotated one.
#[derive(Debug, Clone, Copy, Default)]
pub struct Dblf;

impl Dblf {
    fn hosting_slack(bin: &BinState, dims: Extents, flb: Flb) -> u64 {
        let lo = flb.as_array();
        let d = dims.as_array();
        let boxed = crate::geometry::Ems::new(lo, [lo[0] + d[0], lo[1] + d[1], lo[2] + d[2]]);
        bin.ems()
            .iter()
            .filter(|e| e.contains(&boxed))
            .map(|e| e.volume() - dims.volume())
            .min()
            .unwrap_or(u64::MAX)
    }
}

impl PlacementPolicy for Dblf {
    fn name(&self) -> &str {
        "dblf"
    }

    fn place(&self, bin: &BinState, dims: Extents) -> PlacementDecision {
        let candidates = feasible_positions(bin, dims);
        let best = candidates.into_iter().min_by_key(|&(flb, rot)| {
            let d = if rot { dims.rotated() } else { dims };
            (flb.z, flb.y, flb.x, Self::hosting_slack(bin, d, flb), rot)
        });
        match best {
            Some((flb, rot)) => PlacementDecision { flb, rot, feasible: true },
            None => PlacementDecision::INFEASIBLE,
        }
    }
}

pub const PLACERS: &[&str] = &["dblf"];

pub fn placer_by_name(name: &str) -> Option<Arc<dyn PlacementPolicy>> {
    match name {
        "dblf" => Some(Arc::new(Dblf)),
        _ => None,
    }
}
