//! Multi-objective PPO: each episode draws a preference from a fixed grid,
//! the critic regresses vector returns, advantages are estimated per reward
//! component and scalarised with the episode's preference for the clipped
//! policy loss.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stpack_core::env::{preference_grid, EnvContext, EnvState, PreferenceVector, VectorReward};
use stpack_core::rng::{split, SimRng};

use crate::agent::sample_action;
use crate::checkpoint::{Checkpoint, TrainState};
use crate::net::{NetInput, Network};
use crate::tape::Tape;
use crate::tensor::Matrix;
use crate::LearnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub lr: f64,
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Steps each environment advances per collection phase.
    pub gae_step: usize,
    pub iterations: u64,
    pub envs_per_iter: usize,
    pub pref_grid_size: usize,
    pub seed: u64,
    /// Passes over the collected samples per iteration.
    pub update_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    pub advantage_norm: AdvantageNorm,
}

/// Per-minibatch advantage standardisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageNorm {
    None,
    /// Standardise `ω·A`.
    Scalarized,
    /// Standardise each component of `A`, then scalarise with `ω`.
    PerObjective,
}

fn standardize(xs: &mut [f64]) {
    if xs.len() < 2 {
        return;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let sd = (xs.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / xs.len() as f64).sqrt();
    for a in xs {
        *a = (*a - m) / (sd + 1e-8);
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            gae_lambda: 0.97,
            gamma: 1.0,
            lr: 3e-5,
            clip_eps: 0.3,
            value_coef: 0.5,
            entropy_coef: 0.001,
            gae_step: 3,
            iterations: 100,
            envs_per_iter: 32,
            pref_grid_size: 50,
            seed: 0,
            update_epochs: 4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_grad_norm: Some(0.5),
            advantage_norm: AdvantageNorm::Scalarized,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: String| Err(LearnError::Config(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda must be in [0, 1], got {}", self.gae_lambda));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad(format!("clip_eps must be in (0, 1), got {}", self.clip_eps));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.gae_step == 0 || self.envs_per_iter == 0 || self.update_epochs == 0 {
            return bad("batch_size, gae_step, envs_per_iter and update_epochs must be positive".into());
        }
        if self.pref_grid_size < 2 {
            return bad(format!("pref_grid_size must be at least 2, got {}", self.pref_grid_size));
        }
        if !(self.value_coef >= 0.0 && self.entropy_coef >= 0.0) {
            return bad("loss coefficients must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("adam betas must be in [0, 1) and eps positive".into());
        }
        if let Some(n) = self.max_grad_norm {
            if !(n > 0.0) {
                return bad(format!("max_grad_norm must be positive, got {n}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub input: NetInput,
    pub action: usize,
    pub log_prob: f64,
    pub reward: [f64; 2],
    pub value: [f64; 2],
}

/// Consecutive steps of one episode under one preference. `bootstrap` is
/// the value estimate after the last step, ignored when `terminal`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub omega: PreferenceVector,
    pub terminal: bool,
    pub bootstrap: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdvantageRecord {
    pub advantages: Vec<[f64; 2]>,
    pub returns: Vec<[f64; 2]>,
    pub scalarized: Vec<f64>,
}

/// Generalised advantage estimation on one reward component.
pub fn gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), values.len(), "rewards and values differ in length");
    let mut adv = vec![0.0; rewards.len()];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    adv
}

/// Componentwise GAE with return targets `A + V` and advantages
/// scalarised by the trajectory's preference.
pub fn vector_gae(traj: &Trajectory, gamma: f64, lambda: f64) -> AdvantageRecord {
    let boot = if traj.terminal { [0.0, 0.0] } else { traj.bootstrap };
    let per: Vec<Vec<f64>> = (0..2)
        .map(|c| {
            let r: Vec<f64> = traj.steps.iter().map(|s| s.reward[c]).collect();
            let v: Vec<f64> = traj.steps.iter().map(|s| s.value[c]).collect();
            gae(&r, &v, boot[c], gamma, lambda)
        })
        .collect();
    let w = traj.omega.as_array();
    let mut rec = AdvantageRecord::default();
    for (t, s) in traj.steps.iter().enumerate() {
        let a = [per[0][t], per[1][t]];
        rec.advantages.push(a);
        rec.returns.push([a[0] + s.value[0], a[1] + s.value[1]]);
        rec.scalarized.push(w[0] * a[0] + w[1] * a[1]);
    }
    rec
}

/// Mean over steps of the squared Euclidean distance.
pub fn critic_loss(pred: &[[f64; 2]], target: &[[f64; 2]]) -> Result<f64, LearnError> {
    if pred.len() != target.len() {
        return Err(LearnError::Shape(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = pred.iter().zip(target).map(|(p, t)| (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)).sum();
    Ok(s / pred.len() as f64)
}

/// Negated mean clipped surrogate.
pub fn ppo_clip_loss(logp_new: &[f64], logp_old: &[f64], adv: &[f64], clip_eps: f64) -> f64 {
    assert!(logp_new.len() == logp_old.len() && adv.len() == logp_new.len(), "length mismatch");
    if adv.is_empty() {
        return 0.0;
    }
    let s: f64 = (0..adv.len())
        .map(|i| {
            let rho = (logp_new[i] - logp_old[i]).exp();
            (rho * adv[i]).min(rho.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv[i])
        })
        .sum();
    -s / adv.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step(&mut self, params: &mut [Matrix], grad: &[f64], lr: f64) {
        assert_eq!(grad.len(), self.m.len(), "gradient length");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut k = 0;
        for p in params.iter_mut() {
            for x in &mut p.data {
                let g = grad[k];
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
                let mh = self.m[k] / c1;
                let vh = self.v[k] / c2;
                *x -= lr * mh / (vh.sqrt() + self.eps);
                k += 1;
            }
        }
    }
}

/// One training sample after advantage estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: NetInput,
    pub action: usize,
    pub old_log_prob: f64,
    pub omega: [f64; 2],
    pub advantages: [f64; 2],
    /// `ω·A`
    pub advantage: f64,
    pub target: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Pre-clipping gradient norm, averaged over minibatches.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    pub iteration: u64,
    pub transitions: usize,
    pub episodes: usize,
    pub scalar_return: f64,
    pub space_return: f64,
    pub time_return: f64,
    /// Mean scalarised return of episodes with `w_space` in
    /// `[0, 1/3)`, `[1/3, 2/3)` and `[2/3, 1]`.
    pub bucket_returns: [f64; 3],
    pub update: UpdateStats,
}

impl IterationStats {
    pub const HEADER: [&'static str; 13] = [
        "iteration",
        "transitions",
        "episodes",
        "scalar_return",
        "space_return",
        "time_return",
        "return_w_space_low",
        "return_w_space_mid",
        "return_w_space_high",
        "policy_loss",
        "value_loss",
        "entropy",
        "grad_norm",
    ];

    pub fn record(&self) -> Vec<String> {
        let f = |v: f64| format!("{v:.6}");
        vec![
            self.iteration.to_string(),
            self.transitions.to_string(),
            self.episodes.to_string(),
            f(self.scalar_return),
            f(self.space_return),
            f(self.time_return),
            f(self.bucket_returns[0]),
            f(self.bucket_returns[1]),
            f(self.bucket_returns[2]),
            f(self.update.policy_loss),
            f(self.update.value_loss),
            f(self.update.entropy),
            f(self.update.grad_norm),
        ]
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

struct Slot {
    rng: SimRng,
    state: Option<EnvState>,
}

struct SlotOutput {
    trajectories: Vec<Trajectory>,
    finished: Vec<(PreferenceVector, VectorReward)>,
}

impl Slot {
    fn new(seed: u64, generation: u64, index: usize) -> Self {
        let s = seed ^ generation.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        Self { rng: split(s, 3 + index as u64), state: None }
    }

    fn reset(&mut self, ctx: &Arc<EnvContext>, grid: &[PreferenceVector]) -> Result<(), LearnError> {
        let omega = grid[self.rng.gen_range(0..grid.len())];
        let state = EnvState::reset(ctx.clone(), self.rng.gen(), omega)?;
        if state.is_done() {
            return Err(LearnError::Config("environment has no feasible first action".into()));
        }
        self.state = Some(state);
        Ok(())
    }

    fn run(
        &mut self,
        net: &Network,
        ctx: &Arc<EnvContext>,
        grid: &[PreferenceVector],
        steps: usize,
    ) -> Result<SlotOutput, LearnError> {
        let n_ems = net.config().n_ems;
        let mut out = SlotOutput { trajectories: Vec::new(), finished: Vec::new() };
        let mut cur = Vec::new();
        for _ in 0..steps {
            if self.state.is_none() {
                self.reset(ctx, grid)?;
            }
            let state = self.state.as_mut().expect("state was just reset");
            let input = NetInput::from_state(state, n_ems);
            let pred = net.forward(&input)?;
            let lp = pred.log_probs();
            let action = sample_action(&lp, &mut self.rng)
                .ok_or_else(|| LearnError::Config("no feasible action in a live episode".into()))?;
            let t = state.step(action)?;
            cur.push(Step { input, action, log_prob: lp[action], reward: t.reward.as_array(), value: pred.value });
            if t.done {
                out.finished.push((state.omega(), state.returns()));
                out.trajectories.push(Trajectory {
                    steps: std::mem::take(&mut cur),
                    omega: state.omega(),
                    terminal: true,
                    bootstrap: [0.0; 2],
                });
                self.state = None;
            }
        }
        if !cur.is_empty() {
            let state = self.state.as_ref().expect("unfinished episode");
            let boot = net.forward(&NetInput::from_state(state, n_ems))?;
            out.trajectories.push(Trajectory { steps: cur, omega: state.omega(), terminal: false, bootstrap: boot.value });
        }
        Ok(out)
    }
}

pub struct Trainer {
    pub net: Network,
    pub config: TrainConfig,
    ctx: Arc<EnvContext>,
    grid: Vec<PreferenceVector>,
    slots: Vec<Slot>,
    adam: Adam,
    iteration: u64,
}

impl Trainer {
    pub fn new(net: Network, ctx: Arc<EnvContext>, config: TrainConfig) -> Result<Self, LearnError> {
        let adam = Adam::new(net.params.len(), config.adam_beta1, config.adam_beta2, config.adam_eps);
        Self::with_state(net, ctx, config, adam, 0)
    }

    /// Continues from a training checkpoint. Environments start fresh
    /// episodes; parameters, optimiser state and iteration count carry on.
    pub fn resume(ckpt: &Checkpoint, ctx: Arc<EnvContext>) -> Result<Self, LearnError> {
        let state = ckpt.train.clone().ok_or_else(|| LearnError::Checkpoint("no training state".into()))?;
        let net = ckpt.network()?;
        if state.adam.m.len() != net.params.len() || state.adam.v.len() != net.params.len() {
            return Err(LearnError::Checkpoint("optimiser state does not match parameters".into()));
        }
        Self::with_state(net, ctx, state.config, state.adam, state.iteration)
    }

    fn with_state(
        net: Network,
        ctx: Arc<EnvContext>,
        config: TrainConfig,
        adam: Adam,
        iteration: u64,
    ) -> Result<Self, LearnError> {
        config.validate()?;
        if net.config().n_units != ctx.config.n_units() {
            return Err(LearnError::Config(format!(
                "network expects {} units but the environment has {}",
                net.config().n_units,
                ctx.config.n_units()
            )));
        }
        let grid = preference_grid(config.pref_grid_size)?;
        let slots = (0..config.envs_per_iter).map(|i| Slot::new(config.seed, iteration, i)).collect();
        Ok(Self { net, config, ctx, grid, slots, adam, iteration })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let state = TrainState { config: self.config.clone(), iteration: self.iteration, adam: self.adam.clone() };
        Checkpoint::from_network(&self.net, Some(state))
    }

    /// Advances every environment `gae_step` steps with the current
    /// parameters, sampling actions.
    pub fn collect(&mut self) -> Result<(Vec<Trajectory>, Vec<(PreferenceVector, VectorReward)>), LearnError> {
        let (net, ctx, grid, steps) = (&self.net, &self.ctx, &self.grid, self.config.gae_step);
        let outs: Vec<Result<SlotOutput, LearnError>> =
            self.slots.par_iter_mut().map(|s| s.run(net, ctx, grid, steps)).collect();
        let mut trajs = Vec::new();
        let mut finished = Vec::new();
        for o in outs {
            let o = o?;
            trajs.extend(o.trajectories);
            finished.extend(o.finished);
        }
        Ok((trajs, finished))
    }

    pub fn samples(&self, trajectories: Vec<Trajectory>) -> Vec<Sample> {
        let mut out = Vec::new();
        for traj in trajectories {
            let rec = vector_gae(&traj, self.config.gamma, self.config.gae_lambda);
            for (t, step) in traj.steps.into_iter().enumerate() {
                out.push(Sample {
                    input: step.input,
                    action: step.action,
                    old_log_prob: step.log_prob,
                    omega: traj.omega.as_array(),
                    advantages: rec.advantages[t],
                    advantage: rec.scalarized[t],
                    target: rec.returns[t],
                });
            }
        }
        out
    }

    fn minibatch_gradient(&self, batch: &[&Sample], stats: &mut UpdateStats) -> Result<Vec<f64>, LearnError> {
        let cfg = &self.config;
        let adv: Vec<f64> = match cfg.advantage_norm {
            AdvantageNorm::None => batch.iter().map(|s| s.advantage).collect(),
            AdvantageNorm::Scalarized => {
                let mut a: Vec<f64> = batch.iter().map(|s| s.advantage).collect();
                standardize(&mut a);
                a
            }
            AdvantageNorm::PerObjective => {
                let mut a0: Vec<f64> = batch.iter().map(|s| s.advantages[0]).collect();
                let mut a1: Vec<f64> = batch.iter().map(|s| s.advantages[1]).collect();
                standardize(&mut a0);
                standardize(&mut a1);
                batch.iter().enumerate().map(|(i, s)| s.omega[0] * a0[i] + s.omega[1] * a1[i]).collect()
            }
        };
        let inv_n = 1.0 / batch.len() as f64;
        let mut acc: Option<Vec<Matrix>> = None;
        for (s, &a) in batch.iter().zip(&adv) {
            let mut t = Tape::new(&self.net.params.tensors);
            let loss = sample_loss(&self.net, &mut t, s, a, cfg)?;
            let v = t.value(loss.total).data[0];
            if !v.is_finite() {
                return Err(LearnError::NonFinite("loss".into()));
            }
            stats.policy_loss += t.scalar(loss.policy) * inv_n;
            stats.value_loss += t.scalar(loss.value) * inv_n;
            stats.entropy += -t.scalar(loss.neg_entropy) * inv_n;
            let scaled = t.scale(loss.total, inv_n);
            let g = self.net.backward_tensors(&t, scaled)?;
            match &mut acc {
                None => acc = Some(g),
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
            }
        }
        Ok(acc.expect("non-empty minibatch").into_iter().flat_map(|m| m.data).collect())
    }

    /// Gradient steps over `samples` for the configured number of epochs.
    /// Parameters and optimiser state are restored if any loss or gradient
    /// turns non-finite.
    pub fn update(&mut self, samples: &[Sample], rng: &mut SimRng) -> Result<UpdateStats, LearnError> {
        let mut total = UpdateStats::default();
        if samples.is_empty() {
            return Ok(total);
        }
        let saved = (self.net.params.clone(), self.adam.clone());
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut batches = 0usize;
        for _ in 0..self.config.update_epochs {
            order.shuffle(rng);
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
                let mut stats = UpdateStats::default();
                let step = self.minibatch_gradient(&batch, &mut stats).and_then(|mut g| {
                    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if !norm.is_finite() {
                        return Err(LearnError::NonFinite("gradient".into()));
                    }
                    if let Some(max) = self.config.max_grad_norm {
                        if norm > max {
                            let k = max / norm;
                            g.iter_mut().for_each(|x| *x *= k);
                        }
                    }
                    self.adam.step(&mut self.net.params.tensors, &g, self.config.lr);
                    Ok(norm)
                });
                match step {
                    Ok(norm) => {
                        total.policy_loss += stats.policy_loss;
                        total.value_loss += stats.value_loss;
                        total.entropy += stats.entropy;
                        total.grad_norm += norm;
                        batches += 1;
                    }
                    Err(e) => {
                        (self.net.params, self.adam) = saved;
                        return Err(e);
                    }
                }
            }
        }
        if !self.net.params.is_finite() {
            (self.net.params, self.adam) = saved;
            return Err(LearnError::NonFinite("parameters".into()));
        }
        let b = batches as f64;
        Ok(UpdateStats {
            policy_loss: total.policy_loss / b,
            value_loss: total.value_loss / b,
            entropy: total.entropy / b,
            grad_norm: total.grad_norm / b,
        })
    }

    /// Collect, estimate advantages, update. A numerical failure restores
    /// the previous parameters and reports the iteration.
    pub fn train_iteration(&mut self) -> Result<IterationStats, LearnError> {
        let iteration = self.iteration + 1;
        let abort = |e: LearnError| LearnError::Aborted { iteration, reason: e.to_string() };
        let (trajs, finished) = self.collect().map_err(abort)?;
        let samples = self.samples(trajs);
        let mut rng = split(self.config.seed ^ iteration.wrapping_mul(0xD1B5_4A32_D192_ED03), 2);
        let update = self.update(&samples, &mut rng).map_err(abort)?;
        self.iteration = iteration;

        let scalar: Vec<(f64, f64)> = finished
            .iter()
            .map(|(w, r)| (w.w_space, w.w_space * r.space + w.w_time * r.time))
            .collect();
        let bucket = |lo: f64, hi: f64| mean(scalar.iter().filter(|(w, _)| *w >= lo && *w < hi).map(|(_, s)| *s));
        Ok(IterationStats {
            iteration,
            transitions: samples.len(),
            episodes: finished.len(),
            scalar_return: mean(scalar.iter().map(|(_, s)| *s)),
            space_return: mean(finished.iter().map(|(_, r)| r.space)),
            time_return: mean(finished.iter().map(|(_, r)| r.time)),
            bucket_returns: [bucket(0.0, 1.0 / 3.0), bucket(1.0 / 3.0, 2.0 / 3.0), bucket(2.0 / 3.0, f64::INFINITY)],
            update,
        })
    }
}

/// Loss terms of one sample on a tape.
pub struct SampleLoss {
    pub policy: crate::tape::Var,
    pub value: crate::tape::Var,
    pub neg_entropy: crate::tape::Var,
    pub total: crate::tape::Var,
}

/// `−min(ρÂ, clip(ρ)Â) + c₁‖V − target‖² − c₂·H` for one sample, with `Â`
/// already normalised as desired.
pub fn sample_loss(
    net: &Network,
    t: &mut Tape,
    s: &Sample,
    adv: f64,
    cfg: &TrainConfig,
) -> Result<SampleLoss, LearnError> {
    let fv = net.forward_on(t, &s.input)?;
    let logp = t.pick(fv.log_probs, s.action, 0);
    let old = t.input(Matrix::scalar(s.old_log_prob));
    let diff = t.sub(logp, old);
    let ratio = t.exp(diff);
    let a = t.input(Matrix::scalar(adv));
    let s1 = t.mul(ratio, a);
    let clipped = t.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let s2 = t.mul(clipped, a);
    let surrogate = t.min(s1, s2);
    let policy = t.scale(surrogate, -1.0);

    let target = t.input(Matrix::from_vec(1, 2, s.target.to_vec()));
    let d = t.sub(fv.value, target);
    let sq = t.mul(d, d);
    let value = t.sum(sq);

    // masked log-probabilities are 0, so their p·log p terms vanish
    let p = t.exp(fv.log_probs);
    let plogp = t.mul(p, fv.log_probs);
    let neg_entropy = t.sum(plogp);

    let cv = t.scale(value, cfg.value_coef);
    let ce = t.scale(neg_entropy, cfg.entropy_coef);
    let total = t.add(policy, cv);
    let total = t.add(total, ce);
    Ok(SampleLoss { policy, value, neg_entropy, total })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(rewards: &[[f64; 2]], values: &[[f64; 2]], terminal: bool, boot: [f64; 2]) -> Trajectory {
        let input = NetInput {
            ems_seq: Matrix::zeros(1, 6),
            unit_seq: Matrix::zeros(1, 7),
            time_seq: Matrix::zeros(1, 1),
            omega: [0.5, 0.5],
            mask: vec![true],
        };
        Trajectory {
            steps: rewards
                .iter()
                .zip(values)
                .map(|(&reward, &value)| Step { input: input.clone(), action: 0, log_prob: 0.0, reward, value })
                .collect(),
            omega: PreferenceVector::new(0.25, 0.75).unwrap(),
            terminal,
            bootstrap: boot,
        }
    }

    #[test]
    fn one_step_episode_is_reward_minus_value() {
        let r = vector_gae(&traj(&[[0.5, -0.25]], &[[0.125, -1.0]], true, [9.0, 9.0]), 1.0, 0.97);
        assert_eq!(r.advantages, vec![[0.375, 0.75]]);
        assert_eq!(r.returns, vec![[0.5, -0.25]]);
        assert_eq!(r.scalarized, vec![0.25 * 0.375 + 0.75 * 0.75]);
    }

    #[test]
    fn lambda_zero_is_td_error() {
        let t = traj(&[[1.0, 0.0], [0.0, -1.0]], &[[0.5, 0.5], [0.25, -0.5]], false, [2.0, 1.0]);
        let r = vector_gae(&t, 1.0, 0.0);
        assert_eq!(r.advantages, vec![[1.0 + 0.25 - 0.5, 0.0 - 0.5 - 0.5], [2.0 - 0.25, -1.0 + 1.0 + 0.5]]);
    }

    #[test]
    fn empty_trajectory_gives_empty_record() {
        assert_eq!(vector_gae(&traj(&[], &[], true, [0.0; 2]), 1.0, 0.97), AdvantageRecord::default());
    }

    #[test]
    fn critic_loss_examples() {
        assert_eq!(critic_loss(&[[1.0, 2.0]], &[[1.0, 2.0]]).unwrap(), 0.0);
        assert_eq!(critic_loss(&[[1.0, 0.0], [2.0, 5.0]], &[[0.0, 0.0], [1.0, 5.0]]).unwrap(), 1.0);
        assert_eq!(critic_loss(&[[3.0, 4.0]], &[[0.0, 0.0]]).unwrap(), 25.0);
        assert!(critic_loss(&[[0.0, 0.0]], &[]).is_err());
    }

    #[test]
    fn ppo_clip_examples() {
        assert_eq!(ppo_clip_loss(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 3.0], 0.3), -2.0);
        let l = ppo_clip_loss(&[2f64.ln()], &[0.0], &[1.0], 0.3);
        assert!((l + 1.3).abs() < 1e-15);
        assert_eq!(ppo_clip_loss(&[0.4, -0.2], &[0.0, 0.1], &[0.0, 0.0], 0.3), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { lr: -1e-3, ..Default::default() },
            TrainConfig { clip_eps: 1.0, ..Default::default() },
            TrainConfig { gamma: 1.5, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn adam_zero_lr_is_identity() {
        let mut p = vec![Matrix::from_vec(1, 3, vec![0.5, -2.0, 0.0])];
        let before = p.clone();
        let mut adam = Adam::new(3, 0.9, 0.999, 1e-8);
        adam.step(&mut p, &[1.0, -3.0, 0.25], 0.0);
        assert_eq!(p, before);
        assert_eq!(adam.t, 1);
    }
}
