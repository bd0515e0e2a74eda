use std::sync::Arc;

use proptest::prelude::*;
use stpack_core::env::{scalarize, EnvConfig, EnvContext, EnvState, PreferenceVector};
use stpack_core::eval::{
    pareto_front, run_episodes, spearman, AggregateMetrics, EpisodeMetrics, ParetoPoint, TerminalReason,
};
use stpack_core::geometry::BinDims;
use stpack_core::items::{Face, FaceMask, Item, ItemStream, PerFace, SurfaceCategory};
use stpack_core::policies::{
    baseline_by_name, Mcts, MctsConfig, RandomPolicy, ScalarGreedy, SelectionPolicy, SpaceGreedy, TimeGreedy,
    TopFace, BASELINES,
};
use stpack_core::rng::seeded;

fn ctx(side: u32, buffer: usize) -> Arc<EnvContext> {
    EnvContext::new(EnvConfig::new(BinDims::cube(side).unwrap()).with_buffer(buffer)).unwrap()
}

#[test]
fn every_baseline_picks_feasible_units() {
    let ctx = ctx(6, 3);
    let mcts = MctsConfig { simulations: 8, ..MctsConfig::default() };
    for name in BASELINES {
        let policy = baseline_by_name(name, FaceMask::all(), None, mcts).unwrap();
        for seed in 0..5 {
            let mut state = EnvState::reset(ctx.clone(), seed, PreferenceVector::from_space_weight(0.4)).unwrap();
            let mut rng = seeded(seed);
            while let Some(a) = policy.select(&state, &mut rng) {
                assert!(state.units()[a].feasible(), "{name} picked masked unit {a}");
                state.step(a).unwrap();
            }
        }
    }
    assert!(baseline_by_name("nope", FaceMask::all(), None, mcts).is_none());
}

#[test]
fn time_weight_one_picks_the_cheapest_unit() {
    let ctx = ctx(8, 3);
    let omega = PreferenceVector::new(0.0, 1.0).unwrap();
    for seed in 0..20 {
        let mut state = EnvState::reset(ctx.clone(), seed, omega).unwrap();
        let mut rng = seeded(seed);
        while let Some(a) = ScalarGreedy::default().select(&state, &mut rng) {
            let min = state.feasible_actions().map(|i| state.units()[i].time_cost).fold(f64::INFINITY, f64::min);
            assert_eq!(state.units()[a].time_cost, min);
            state.step(a).unwrap();
        }
    }
}

#[test]
fn scalar_greedy_maximises_immediate_reward() {
    let ctx = ctx(8, 2);
    for (seed, w) in [(0, 0.1), (1, 0.5), (2, 0.97), (3, 1.0)] {
        let omega = PreferenceVector::from_space_weight(w);
        let mut state = EnvState::reset(ctx.clone(), seed, omega).unwrap();
        let mut rng = seeded(seed);
        while let Some(a) = ScalarGreedy::default().select(&state, &mut rng) {
            let v = |i: usize| scalarize(omega, state.unit_reward(&state.units()[i]));
            let best = state.feasible_actions().map(v).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(v(a), best);
            state.step(a).unwrap();
        }
    }
}

#[test]
fn space_greedy_minimises_its_score() {
    let ctx = ctx(8, 2);
    let mut state = EnvState::reset(ctx, 5, PreferenceVector::from_space_weight(0.5)).unwrap();
    let mut rng = seeded(0);
    while let Some(a) = SpaceGreedy::default().select(&state, &mut rng) {
        let score = |i: usize| SpaceGreedy::space_score(&state, &state.units()[i]);
        let best = state.feasible_actions().map(score).min().unwrap();
        assert_eq!(score(a), best);
        state.step(a).unwrap();
    }
}

#[test]
fn time_greedy_is_faster_than_space_greedy() {
    let ctx = ctx(6, 1);
    let omega = PreferenceVector::from_space_weight(0.5);
    let t = run_episodes(&TimeGreedy::default(), &ctx, omega, 50, 0).unwrap();
    let s = run_episodes(&SpaceGreedy::default(), &ctx, omega, 50, 0).unwrap();
    assert!(t.aggregate.time_mean <= s.aggregate.time_mean);
}

#[test]
fn top_face_only_grasps_tops() {
    let ctx = ctx(8, 2);
    let r = run_episodes(&TopFace, &ctx, PreferenceVector::from_space_weight(0.5), 20, 0).unwrap();
    assert_eq!(r.aggregate.face_pct.top, 100.0);
}

#[test]
fn random_policy_respects_its_mask() {
    let ctx = ctx(8, 2);
    let policy = RandomPolicy { mask: FaceMask::only(&[Face::Front, Face::Left]) };
    let r = run_episodes(&policy, &ctx, PreferenceVector::from_space_weight(0.5), 20, 0).unwrap();
    assert_eq!(r.aggregate.face_pct.front + r.aggregate.face_pct.left, 100.0);
}

fn surf(top: SurfaceCategory, rest: SurfaceCategory) -> PerFace<SurfaceCategory> {
    let mut s = PerFace::splat(rest);
    s.top = top;
    s
}

/// Best scalarised return over all action sequences, by exhaustive search.
fn brute_force(state: &EnvState, omega: PreferenceVector) -> f64 {
    let actions: Vec<usize> = state.feasible_actions().collect();
    if actions.is_empty() {
        return 0.0;
    }
    actions
        .into_iter()
        .map(|a| {
            let mut next = state.clone();
            let r = scalarize(omega, next.step(a).unwrap().reward);
            r + brute_force(&next, omega)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn mcts_with_a_large_budget_finds_the_optimum() {
    use SurfaceCategory::*;
    let cases = [
        vec![Item::new(0, 2, 3, 4, surf(Labeled, Smooth)), Item::new(1, 4, 4, 1, surf(Smooth, Taped))],
        vec![Item::new(0, 4, 2, 2, surf(Taped, Labeled)), Item::new(1, 3, 3, 3, surf(Labeled, Smooth))],
        vec![Item::new(0, 1, 4, 3, surf(Smooth, Smooth)), Item::new(1, 4, 4, 4, surf(Labeled, Taped))],
    ];
    let ctx = ctx(4, 2);
    let mcts = Mcts::new(MctsConfig { simulations: 4000, ..MctsConfig::default() });
    for items in cases {
        for w in [0.0, 0.5, 0.9, 1.0] {
            let omega = PreferenceVector::from_space_weight(w);
            let state = EnvState::with_stream(ctx.clone(), ItemStream::replay(items.clone()), omega);
            let best = brute_force(&state, omega);
            let a = mcts.select(&state, &mut seeded(0)).unwrap();
            let mut next = state.clone();
            let got = scalarize(omega, next.step(a).unwrap().reward) + brute_force(&next, omega);
            assert!((got - best).abs() < 1e-12, "w {w}: picked {a} worth {got}, optimum {best}");
        }
    }
}

#[test]
fn mcts_is_deterministic_given_its_rng() {
    let ctx = ctx(6, 3);
    let mcts = Mcts::new(MctsConfig { simulations: 30, ..MctsConfig::default() });
    let state = EnvState::reset(ctx, 4, PreferenceVector::from_space_weight(0.5)).unwrap();
    let a = mcts.select(&state, &mut seeded(9));
    assert_eq!(a, mcts.select(&state, &mut seeded(9)));
}

fn point(u: f64, t: f64) -> ParetoPoint {
    ParetoPoint { omega: PreferenceVector::from_space_weight(0.5), uti_mean: u, time_mean: t }
}

proptest! {
    #[test]
    fn frontier_is_a_nondominated_subset(pts in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..40)) {
        let points: Vec<ParetoPoint> = pts.iter().map(|&(u, t)| point((u * 4.0).round() / 4.0, (t * 4.0).round() / 4.0)).collect();
        let front = pareto_front(&points);
        prop_assert!(!front.is_empty());
        for p in &front {
            prop_assert!(points.contains(p));
            for q in &points {
                let dominates = q.uti_mean >= p.uti_mean && q.time_mean <= p.time_mean
                    && (q.uti_mean > p.uti_mean || q.time_mean < p.time_mean);
                prop_assert!(!dominates);
            }
        }
        for p in &points {
            if !front.contains(p) {
                prop_assert!(front.iter().any(|q| q.uti_mean >= p.uti_mean && q.time_mean <= p.time_mean));
            }
        }
        prop_assert_eq!(pareto_front(&front), front);
    }

    #[test]
    fn spearman_is_bounded_and_rank_based(xs in prop::collection::vec(-10.0f64..10.0, 2..30)) {
        let ys: Vec<f64> = xs.iter().map(|x| x.powi(3) + 1.0).collect();
        let rho = spearman(&xs, &ys);
        let distinct = xs.iter().any(|x| *x != xs[0]);
        if distinct {
            prop_assert!((rho - 1.0).abs() < 1e-12);
            let neg: Vec<f64> = ys.iter().map(|y| -y).collect();
            prop_assert!((spearman(&xs, &neg) + 1.0).abs() < 1e-12);
        }
        prop_assert!((-1.0..=1.0).contains(&rho));
    }
}

#[test]
fn aggregate_matches_recomputation() {
    let ctx = ctx(8, 2);
    let r = run_episodes(&RandomPolicy::default(), &ctx, PreferenceVector::from_space_weight(0.5), 30, 100).unwrap();
    let eps: &[EpisodeMetrics] = &r.episodes;
    let n = eps.len() as f64;
    let uti = eps.iter().map(|e| e.uti).sum::<f64>() / n;
    let time = eps.iter().map(|e| e.time).sum::<f64>() / n;
    let var = eps.iter().map(|e| (e.uti - uti).powi(2)).sum::<f64>() / n;
    assert!((r.aggregate.uti_mean - uti).abs() < 1e-9);
    assert!((r.aggregate.time_mean - time).abs() < 1e-9);
    assert!((r.aggregate.uti_std - var.sqrt()).abs() < 1e-9);
    let pct = r.aggregate.face_pct.values().iter().sum::<f64>();
    assert!((pct - 100.0).abs() < 1e-9);
    assert_eq!(r.aggregate, AggregateMetrics::from_episodes(eps));
    for (i, e) in eps.iter().enumerate() {
        assert_eq!(e.seed, 100 + i as u64);
        assert_eq!(e.terminal_reason, TerminalReason::NoFeasibleUnit);
        assert!((e.space_return * 100.0 - e.uti).abs() < 1e-9);
    }
    let again = run_episodes(&RandomPolicy::default(), &ctx, PreferenceVector::from_space_weight(0.5), 30, 100).unwrap();
    assert_eq!(again, r);
}
