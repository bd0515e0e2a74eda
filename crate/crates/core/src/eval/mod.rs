//! Experiment harness: seeded episodes, aggregate metrics, Pareto fronts
//! and sweeps.
//!
//! Episode `i` of a run seeded with `s` uses seed `s + i` for its item stream
//! and policy generator, so different policies evaluated with the same seed
//! see the same arrivals. Standard deviations are population (÷n).

mod report;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{scalarize, EnvConfig, EnvContext, EnvError, EnvState, PreferenceVector};
use crate::items::{Face, PerFace};
use crate::policies::SelectionPolicy;
use crate::rng::{self, streams};

pub use report::{
    pareto_csv, pareto_svg, table_csv, variability_csv, write_trace_jsonl, TABLE_HEADER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    /// No feasible unit was left.
    NoFeasibleUnit,
    /// The policy declined to choose although feasible units existed.
    PolicyStopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub seed: u64,
    /// Space utilisation in percent.
    pub uti: f64,
    pub num_items: u32,
    /// Un-normalised operational time.
    pub time: f64,
    pub face_counts: PerFace<u32>,
    pub terminal_reason: TerminalReason,
    /// Episode sums of the two reward components.
    pub space_return: f64,
    pub time_return: f64,
    pub scalar_return: f64,
}

/// One step of an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub state_hash: String,
    pub action: usize,
    pub unit: [f64; 7],
    pub time: f64,
    pub reward: [f64; 2],
    pub omega: [f64; 2],
}

/// Plays one episode to termination.
pub fn run_episode(
    policy: &dyn SelectionPolicy,
    ctx: &Arc<EnvContext>,
    seed: u64,
    omega: PreferenceVector,
    trace: Option<&mut Vec<StepRecord>>,
) -> Result<EpisodeMetrics, EnvError> {
    run_episode_from(policy, EnvState::reset(ctx.clone(), seed, omega)?, seed, trace)
}

/// Plays `state` to termination; `seed` selects the policy's generator.
pub fn run_episode_from(
    policy: &dyn SelectionPolicy,
    mut state: EnvState,
    seed: u64,
    mut trace: Option<&mut Vec<StepRecord>>,
) -> Result<EpisodeMetrics, EnvError> {
    let omega = state.omega();
    let mut policy_rng = rng::split(seed, streams::POLICY);
    let mut reason = TerminalReason::NoFeasibleUnit;
    while !state.is_done() {
        let Some(action) = policy.select(&state, &mut policy_rng) else {
            reason = TerminalReason::PolicyStopped;
            break;
        };
        let hash = trace.as_ref().map(|_| state.state_hash());
        let unit = state.unit_encoding(action);
        let time = state.time_feature(action);
        let step = state.step_count();
        let t = state.step(action)?;
        if let (Some(tr), Some(state_hash)) = (trace.as_deref_mut(), hash) {
            tr.push(StepRecord {
                step,
                state_hash,
                action,
                unit,
                time,
                reward: t.reward.as_array(),
                omega: omega.as_array(),
            });
        }
    }
    let returns = state.returns();
    Ok(EpisodeMetrics {
        seed,
        uti: 100.0 * state.utilization(),
        num_items: state.step_count() as u32,
        time: state.total_time(),
        face_counts: state.face_counts(),
        terminal_reason: reason,
        space_return: returns.space,
        time_return: returns.time,
        scalar_return: scalarize(omega, returns),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub episodes: usize,
    pub uti_mean: f64,
    pub uti_std: f64,
    pub num_mean: f64,
    pub time_mean: f64,
    pub time_std: f64,
    /// Share of grasps per face over all placed items, in percent.
    pub face_pct: PerFace<f64>,
    pub left_right_pct: f64,
    pub scalar_return_mean: f64,
    pub scalar_return_std: f64,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

impl AggregateMetrics {
    pub fn from_episodes(eps: &[EpisodeMetrics]) -> Self {
        let (uti_mean, uti_std) = mean_std(eps.iter().map(|e| e.uti));
        let (time_mean, time_std) = mean_std(eps.iter().map(|e| e.time));
        let (num_mean, _) = mean_std(eps.iter().map(|e| e.num_items as f64));
        let (scalar_return_mean, scalar_return_std) = mean_std(eps.iter().map(|e| e.scalar_return));
        let mut totals = PerFace::splat(0u64);
        for e in eps {
            for f in Face::ALL {
                totals[f] += e.face_counts[f] as u64;
            }
        }
        let placed: u64 = totals.values().iter().sum();
        let mut face_pct = PerFace::splat(0.0);
        if placed > 0 {
            for f in Face::ALL {
                face_pct[f] = 100.0 * totals[f] as f64 / placed as f64;
            }
        }
        Self {
            episodes: eps.len(),
            uti_mean,
            uti_std,
            num_mean,
            time_mean,
            time_std,
            face_pct,
            left_right_pct: face_pct.left + face_pct.right,
            scalar_return_mean,
            scalar_return_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub aggregate: AggregateMetrics,
    pub episodes: Vec<EpisodeMetrics>,
}

/// Runs `n` episodes with seeds `seed..seed + n`, in parallel.
pub fn run_episodes(
    policy: &dyn SelectionPolicy,
    ctx: &Arc<EnvContext>,
    omega: PreferenceVector,
    n: usize,
    seed: u64,
) -> Result<EvalReport, EnvError> {
    if n == 0 {
        return Err(EnvError::Config("episode count must be at least 1".into()));
    }
    let episodes = (0..n as u64)
        .into_par_iter()
        .map(|i| run_episode(policy, ctx, seed.wrapping_add(i), omega, None))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport { aggregate: AggregateMetrics::from_episodes(&episodes), episodes })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub omega: PreferenceVector,
    pub uti_mean: f64,
    pub time_mean: f64,
}

fn dominates(q: &ParetoPoint, p: &ParetoPoint) -> bool {
    q.uti_mean >= p.uti_mean
        && q.time_mean <= p.time_mean
        && (q.uti_mean > p.uti_mean || q.time_mean < p.time_mean)
}

/// Points not dominated by any other (utilisation maximised, time
/// minimised), sorted by utilisation then time.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut front: Vec<ParetoPoint> = points
        .iter()
        .filter(|p| !points.iter().any(|q| dominates(q, p)))
        .copied()
        .collect();
    front.sort_by(|a, b| a.uti_mean.total_cmp(&b.uti_mean).then(a.time_mean.total_cmp(&b.time_mean)));
    front
}

/// One point per preference, from `n_per_omega` episodes of the policy built
/// for that preference.
pub fn preference_sweep(
    make_policy: &(dyn Fn(PreferenceVector) -> Box<dyn SelectionPolicy> + Sync),
    ctx: &Arc<EnvContext>,
    grid: &[PreferenceVector],
    n_per_omega: usize,
    seed: u64,
) -> Result<Vec<ParetoPoint>, EnvError> {
    grid.iter()
        .map(|&omega| {
            let policy = make_policy(omega);
            let r = run_episodes(policy.as_ref(), ctx, omega, n_per_omega, seed)?;
            Ok(ParetoPoint { omega, uti_mean: r.aggregate.uti_mean, time_mean: r.aggregate.time_mean })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariabilityRow {
    pub policy: String,
    /// Percent of items drawn from the Variable class.
    pub fraction: f64,
    pub aggregate: AggregateMetrics,
}

/// Evaluates each policy on streams with the given percentages of
/// variable-shaped items.
pub fn variability_sweep(
    policies: &[&dyn SelectionPolicy],
    fractions: &[f64],
    base: &EnvConfig,
    omega: PreferenceVector,
    n: usize,
    seed: u64,
) -> Result<Vec<VariabilityRow>, EnvError> {
    let mut rows = Vec::new();
    for &fraction in fractions {
        if !(0.0..=100.0).contains(&fraction) {
            return Err(EnvError::Config(format!("variable fraction {fraction}% outside [0, 100]")));
        }
        let mut cfg = base.clone();
        cfg.stream.variable_fraction = Some(fraction / 100.0);
        let ctx = EnvContext::new(cfg)?;
        for p in policies {
            let r = run_episodes(*p, &ctx, omega, n, seed)?;
            rows.push(VariabilityRow { policy: p.name().to_string(), fraction, aggregate: r.aggregate });
        }
    }
    Ok(rows)
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    assert_eq!(xs.len(), ys.len());
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}
