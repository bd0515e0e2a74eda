//! Selection policies over the item–face candidates.
//!
//! A policy returns `None` when it has nothing it is willing to select; the
//! episode then ends even if the environment still has feasible units
//! (a top-face-only policy facing an item that only fits on its side).

mod mcts;

use rand::seq::SliceRandom;

use crate::env::{scalarize, EnvState, ItemFaceUnit, PreferenceVector};
use crate::items::{Face, FaceMask};
use crate::rng::SimRng;

pub use mcts::{Mcts, MctsConfig, RolloutKind};

pub trait SelectionPolicy: Send + Sync {
    fn name(&self) -> &str;

    fn select(&self, state: &EnvState, rng: &mut SimRng) -> Option<usize>;
}

fn candidates<'a>(
    state: &'a EnvState,
    mask: &'a FaceMask,
) -> impl Iterator<Item = (usize, &'a ItemFaceUnit)> + 'a {
    state
        .units()
        .iter()
        .enumerate()
        .filter(move |(_, u)| u.feasible() && mask.allows(u.face))
}

/// Grasps only by the top face: the first item whose top-face unit is
/// feasible.
#[derive(Debug, Clone, Copy, Default)]
pub struct TopFace;

impl SelectionPolicy for TopFace {
    fn name(&self) -> &str {
        "top-face"
    }

    fn select(&self, state: &EnvState, _rng: &mut SimRng) -> Option<usize> {
        candidates(state, &FaceMask::only(&[Face::Top])).map(|(i, _)| i).next()
    }
}

/// One-step space heuristic: lowest resulting top of the placed box, then
/// least empty volume trapped under it, then lowest time, then index.
#[derive(Debug, Clone, Copy)]
pub struct SpaceGreedy {
    pub mask: FaceMask,
}

impl Default for SpaceGreedy {
    fn default() -> Self {
        Self { mask: FaceMask::all() }
    }
}

impl SpaceGreedy {
    /// `(top height, trapped volume)` of placing `unit`.
    pub fn space_score(state: &EnvState, unit: &ItemFaceUnit) -> (u32, u64) {
        let d = unit.placed_dims();
        let flb = unit.decision.flb;
        let bin = state.bin();
        let mut waste = 0u64;
        for y in flb.y..flb.y + d.dy {
            for x in flb.x..flb.x + d.dx {
                waste += (flb.z - bin.height_at(x, y)) as u64;
            }
        }
        (flb.z + d.dz, waste)
    }
}

impl SelectionPolicy for SpaceGreedy {
    fn name(&self) -> &str {
        "space-greedy"
    }

    fn select(&self, state: &EnvState, _rng: &mut SimRng) -> Option<usize> {
        candidates(state, &self.mask)
            .min_by(|(ia, a), (ib, b)| {
                Self::space_score(state, a)
                    .cmp(&Self::space_score(state, b))
                    .then(a.time_cost.total_cmp(&b.time_cost))
                    .then(ia.cmp(ib))
            })
            .map(|(i, _)| i)
    }
}

/// Cheapest operational time; ties go to the lowest index.
#[derive(Debug, Clone, Copy)]
pub struct TimeGreedy {
    pub mask: FaceMask,
}

impl Default for TimeGreedy {
    fn default() -> Self {
        Self { mask: FaceMask::all() }
    }
}

impl SelectionPolicy for TimeGreedy {
    fn name(&self) -> &str {
        "time-greedy"
    }

    fn select(&self, state: &EnvState, _rng: &mut SimRng) -> Option<usize> {
        candidates(state, &self.mask)
            .min_by(|(ia, a), (ib, b)| a.time_cost.total_cmp(&b.time_cost).then(ia.cmp(ib)))
            .map(|(i, _)| i)
    }
}

/// Maximises the scalarised immediate reward. Uses the episode's preference
/// unless one is fixed here.
#[derive(Debug, Clone, Copy)]
pub struct ScalarGreedy {
    pub omega: Option<PreferenceVector>,
    pub mask: FaceMask,
}

impl Default for ScalarGreedy {
    fn default() -> Self {
        Self { omega: None, mask: FaceMask::all() }
    }
}

impl ScalarGreedy {
    pub fn with_omega(omega: PreferenceVector) -> Self {
        Self { omega: Some(omega), ..Self::default() }
    }
}

pub(crate) fn scalar_greedy_action(
    state: &EnvState,
    omega: PreferenceVector,
    mask: &FaceMask,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, u) in candidates(state, mask) {
        let v = scalarize(omega, state.unit_reward(u));
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

impl SelectionPolicy for ScalarGreedy {
    fn name(&self) -> &str {
        "scalar-greedy"
    }

    fn select(&self, state: &EnvState, _rng: &mut SimRng) -> Option<usize> {
        scalar_greedy_action(state, self.omega.unwrap_or(state.omega()), &self.mask)
    }
}

/// Uniform over feasible units.
#[derive(Debug, Clone, Copy)]
pub struct RandomPolicy {
    pub mask: FaceMask,
}

impl Default for RandomPolicy {
    fn default() -> Self {
        Self { mask: FaceMask::all() }
    }
}

pub(crate) fn random_action(state: &EnvState, mask: &FaceMask, rng: &mut SimRng) -> Option<usize> {
    let feasible: Vec<usize> = candidates(state, mask).map(|(i, _)| i).collect();
    feasible.choose(rng).copied()
}

impl SelectionPolicy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn select(&self, state: &EnvState, rng: &mut SimRng) -> Option<usize> {
        random_action(state, &self.mask, rng)
    }
}

pub const BASELINES: &[&str] =
    &["top-face", "space-greedy", "time-greedy", "scalar-greedy", "random", "mcts"];

/// Builds a non-learned policy by name. `mask` restricts the faces of every
/// policy except `top-face`, which is restricted by definition.
pub fn baseline_by_name(
    name: &str,
    mask: FaceMask,
    omega: Option<PreferenceVector>,
    mcts: MctsConfig,
) -> Option<Box<dyn SelectionPolicy>> {
    Some(match name {
        "top-face" => Box::new(TopFace),
        "space-greedy" => Box::new(SpaceGreedy { mask }),
        "time-greedy" => Box::new(TimeGreedy { mask }),
        "scalar-greedy" => Box::new(ScalarGreedy { omega, mask }),
        "random" => Box::new(RandomPolicy { mask }),
        "mcts" => Box::new(Mcts { config: mcts, omega, mask }),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::env::{EnvConfig, EnvContext};
    use crate::geometry::{BinDims, Flb};
    use crate::items::{Item, ItemStream, PerFace, SurfaceCategory};
    use crate::rng;

    fn ctx(n: usize) -> Arc<EnvContext> {
        EnvContext::new(EnvConfig::new(BinDims::cube(10).unwrap()).with_buffer(n)).unwrap()
    }

    fn state_with(items: Vec<Item>, n: usize) -> EnvState {
        EnvState::with_stream(ctx(n), ItemStream::replay(items), PreferenceVector::from_space_weight(0.5))
    }

    fn smooth(id: u64, l: u32, w: u32, h: u32) -> Item {
        Item::new(id, l, w, h, PerFace::splat(SurfaceCategory::Smooth))
    }

    #[test]
    fn top_face_picks_index_zero() {
        let s = state_with(vec![smooth(0, 2, 3, 4)], 1);
        assert_eq!(TopFace.select(&s, &mut rng::seeded(0)), Some(0));
    }

    #[test]
    fn top_face_cannot_reorient() {
        // a 6-high slab leaves 4 cells of headroom; the item only fits on its side
        let mut s = state_with(vec![smooth(0, 10, 10, 6), smooth(1, 1, 4, 5)], 1);
        s.step(0).unwrap();
        assert!(!s.units()[0].feasible());
        assert!(s.feasible_actions().next().is_some());
        assert_eq!(TopFace.select(&s, &mut rng::seeded(0)), None);
    }

    #[test]
    fn all_policies_signal_terminal_when_masked() {
        let s = state_with(vec![smooth(0, 11, 11, 11)], 1);
        assert!(s.is_done());
        let mut r = rng::seeded(0);
        let policies: Vec<Box<dyn SelectionPolicy>> = BASELINES
            .iter()
            .map(|n| baseline_by_name(n, FaceMask::all(), None, MctsConfig::default()).unwrap())
            .collect();
        for p in policies {
            assert_eq!(p.select(&s, &mut r), None, "{}", p.name());
        }
    }

    #[test]
    fn space_greedy_prefers_lower_top() {
        // item 1x5x2: top gives height 2, front/back (1,2,5) height 5, sides (5,2,1) height 1
        let s = state_with(vec![smooth(0, 1, 5, 2)], 1);
        let a = SpaceGreedy::default().select(&s, &mut rng::seeded(0)).unwrap();
        assert_eq!(s.units()[a].face, Face::Left);
    }

    #[test]
    fn space_greedy_breaks_ties_on_time() {
        // cube: every face gives the same space score; front costs 1+2=3, top 0
        let mut it = smooth(0, 2, 2, 2);
        it.surface.front = SurfaceCategory::Taped;
        let s = state_with(vec![it], 1);
        assert_eq!(SpaceGreedy::default().select(&s, &mut rng::seeded(0)), Some(0));
    }

    #[test]
    fn time_greedy_cases() {
        let s = state_with(vec![smooth(0, 2, 3, 4)], 1);
        assert_eq!(TimeGreedy::default().select(&s, &mut rng::seeded(0)), Some(0));

        let mut costly = smooth(0, 2, 2, 2);
        costly.surface = PerFace::splat(SurfaceCategory::Labeled);
        let mut p = crate::items::TimeCostProfile::simulation();
        p.reorient = PerFace::splat(3.0);
        let mut cfg = EnvConfig::new(BinDims::cube(10).unwrap());
        cfg.profile = p;
        let c = EnvContext::new(cfg).unwrap();
        let s = EnvState::with_stream(c, ItemStream::replay([costly]), PreferenceVector::from_space_weight(0.5));
        assert!(s.units().iter().all(|u| u.time_cost == 7.0));
        assert_eq!(TimeGreedy::default().select(&s, &mut rng::seeded(0)), Some(0));
    }

    #[test]
    fn time_greedy_takes_back_when_only_option() {
        let s = state_with(vec![smooth(0, 2, 3, 4)], 1);
        let t = TimeGreedy { mask: FaceMask::only(&[Face::Back]) };
        assert_eq!(t.select(&s, &mut rng::seeded(0)), Some(2));
    }

    #[test]
    fn scalar_greedy_reductions() {
        let mut small = smooth(0, 1, 1, 1);
        small.surface.front = SurfaceCategory::Taped;
        let big = smooth(1, 3, 3, 3);
        let s = state_with(vec![small, big], 2);
        let space = ScalarGreedy::with_omega(PreferenceVector::new(1.0, 0.0).unwrap());
        let a = space.select(&s, &mut rng::seeded(0)).unwrap();
        assert_eq!(s.units()[a].item_id, 1);
        let time = ScalarGreedy::with_omega(PreferenceVector::new(0.0, 1.0).unwrap());
        let a = time.select(&s, &mut rng::seeded(0)).unwrap();
        let min_t = s.feasible_actions().map(|i| s.units()[i].time_cost).fold(f64::INFINITY, f64::min);
        assert_eq!(s.units()[a].time_cost, min_t);
    }

    #[test]
    fn single_candidate_is_chosen_by_all() {
        let mut cfg = EnvConfig::new(BinDims::cube(10).unwrap());
        cfg.face_mask = FaceMask::only(&[Face::Right]);
        let c = EnvContext::new(cfg).unwrap();
        let s = EnvState::with_stream(c, ItemStream::replay([smooth(0, 2, 3, 4)]), PreferenceVector::from_space_weight(0.5));
        let mut r = rng::seeded(3);
        for name in BASELINES.iter().filter(|n| **n != "top-face") {
            let p = baseline_by_name(name, FaceMask::all(), None, MctsConfig::default()).unwrap();
            assert_eq!(p.select(&s, &mut r), Some(4), "{name}");
        }
    }

    #[test]
    fn random_is_reproducible() {
        let s = state_with(vec![smooth(0, 2, 3, 4), smooth(1, 1, 2, 3)], 2);
        let picks = |seed| {
            let mut r = rng::seeded(seed);
            (0..20).map(|_| RandomPolicy::default().select(&s, &mut r).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(picks(11), picks(11));
    }

    #[test]
    fn space_score_counts_trapped_cells() {
        let mut s = state_with(vec![smooth(0, 1, 1, 3), smooth(1, 2, 2, 1)], 1);
        s.step(0).unwrap();
        let u = s.units()[0];
        assert_eq!(u.decision.flb, Flb::new(1, 0, 0));
        assert_eq!(SpaceGreedy::space_score(&s, &u), (1, 0));
    }
}
