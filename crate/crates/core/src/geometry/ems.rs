//! Empty maximal space maintenance by the difference process.

use super::{BinDims, Ems, PlacedBox};

/// Updates a complete set of maximal empty spaces after `new_box` is placed.
///
/// Spaces that do not touch the box stay maximal. Every space the box cuts is
/// replaced by its (up to six) residual slabs on each side of the box; a
/// residual is kept only if no other candidate contains it. Given a complete
/// maximal set on input, the output is again the complete maximal set.
pub fn ems_update(ems: &[Ems], new_box: &PlacedBox, _dims: BinDims) -> Vec<Ems> {
    let cut = new_box.as_space();
    let mut kept = Vec::with_capacity(ems.len() + 8);
    let mut residuals = Vec::new();
    for e in ems {
        if !e.intersects(&cut) {
            kept.push(*e);
            continue;
        }
        for axis in 0..3 {
            if cut.lo[axis] > e.lo[axis] {
                let mut r = *e;
                r.hi[axis] = cut.lo[axis];
                residuals.push(r);
            }
            if cut.hi[axis] < e.hi[axis] {
                let mut r = *e;
                r.lo[axis] = cut.hi[axis];
                residuals.push(r);
            }
        }
    }
    residuals.sort_unstable();
    residuals.dedup();

    // An old space disjoint from the box can never sit inside a residual, so
    // only residuals need pruning.
    let survivors: Vec<Ems> = residuals
        .iter()
        .enumerate()
        .filter(|(i, r)| {
            !kept.iter().any(|k| k.contains(r))
                && !residuals
                    .iter()
                    .enumerate()
                    .any(|(j, o)| j != *i && o.contains(r))
        })
        .map(|(_, r)| *r)
        .collect();

    kept.extend(survivors);
    kept.sort_unstable();
    kept
}

/// Fixed-length encoding of an EMS set for the network.
///
/// Spaces are ordered by volume (largest first, ties by `lo` then `hi`),
/// truncated to `n_ems` and zero-padded. Coordinates are divided by the bin
/// size along the matching axis.
pub fn ems_encode(ems: &[Ems], n_ems: usize, dims: BinDims) -> Vec<[f64; 6]> {
    let mut sorted: Vec<&Ems> = ems.iter().collect();
    sorted.sort_by(|a, b| {
        b.volume()
            .cmp(&a.volume())
            .then_with(|| a.lo.cmp(&b.lo))
            .then_with(|| a.hi.cmp(&b.hi))
    });
    let scale = dims.as_array().map(|s| s as f64);
    let mut out: Vec<[f64; 6]> = sorted
        .into_iter()
        .take(n_ems)
        .map(|e| {
            [
                e.lo[0] as f64 / scale[0],
                e.lo[1] as f64 / scale[1],
                e.lo[2] as f64 / scale[2],
                e.hi[0] as f64 / scale[0],
                e.hi[1] as f64 / scale[1],
                e.hi[2] as f64 / scale[2],
            ]
        })
        .collect();
    out.resize(n_ems, [0.0; 6]);
    out
}
