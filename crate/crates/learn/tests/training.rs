mod common;

use common::{ctx, random_input, small_net};
use proptest::prelude::*;
use rand::Rng;
use stpack_core::env::PreferenceVector;
use stpack_core::rng::{seeded, SimRng};
use stpack_learn::tape::Tape;
use stpack_learn::train::{gae, sample_loss, vector_gae, AdvantageNorm, Sample, Step, Trajectory};
use stpack_learn::{Checkpoint, LearnError, NetConfig, Network, TrainConfig, Trainer};

/// `A_t = Σ_l (γλ)^l δ_{t+l}`, summed directly.
fn naive_gae(r: &[f64], v: &[f64], boot: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let next = |t: usize| if t + 1 < n { v[t + 1] } else { boot };
    let delta: Vec<f64> = (0..n).map(|t| r[t] + gamma * next(t) - v[t]).collect();
    (0..n)
        .map(|t| (t..n).map(|k| (gamma * lambda).powi((k - t) as i32) * delta[k]).sum())
        .collect()
}

fn traj_from(rewards: Vec<[f64; 2]>, values: Vec<[f64; 2]>, omega: PreferenceVector, terminal: bool, boot: [f64; 2]) -> Trajectory {
    let input = random_input(0, 1, 4);
    Trajectory {
        steps: rewards
            .into_iter()
            .zip(values)
            .map(|(reward, value)| Step { input: input.clone(), action: 0, log_prob: 0.0, reward, value })
            .collect(),
        omega,
        terminal,
        bootstrap: boot,
    }
}

#[test]
fn gae_matches_direct_summation() {
    let mut rng = seeded(5);
    for _ in 0..100 {
        let n = rng.gen_range(1..40);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let boot = rng.gen_range(-3.0..3.0);
        let gamma = rng.gen_range(0.5..=1.0);
        let lambda = rng.gen_range(0.0..=1.0);
        let fast = gae(&r, &v, boot, gamma, lambda);
        let slow = naive_gae(&r, &v, boot, gamma, lambda);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

/// Scalarising the advantages equals running GAE on scalarised rewards and
/// values, exactly when every quantity is a short dyadic fraction.
#[test]
fn scalarised_vector_gae_is_exact_on_dyadic_values() {
    let mut rng = seeded(6);
    let dyadic = |rng: &mut SimRng| rng.gen_range(-64i32..64) as f64 / 16.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..12);
        let rewards: Vec<[f64; 2]> = (0..n).map(|_| [dyadic(&mut rng), dyadic(&mut rng)]).collect();
        let values: Vec<[f64; 2]> = (0..n).map(|_| [dyadic(&mut rng), dyadic(&mut rng)]).collect();
        let boot = [dyadic(&mut rng), dyadic(&mut rng)];
        let w = rng.gen_range(0..=4) as f64 / 4.0;
        let omega = PreferenceVector::from_space_weight(w);
        let terminal = rng.gen_bool(0.5);
        let t = traj_from(rewards.clone(), values.clone(), omega, terminal, boot);
        let rec = vector_gae(&t, 1.0, 0.5);
        let sr: Vec<f64> = rewards.iter().map(|r| w * r[0] + (1.0 - w) * r[1]).collect();
        let sv: Vec<f64> = values.iter().map(|v| w * v[0] + (1.0 - w) * v[1]).collect();
        let sb = if terminal { 0.0 } else { w * boot[0] + (1.0 - w) * boot[1] };
        assert_eq!(rec.scalarized, gae(&sr, &sv, sb, 1.0, 0.5));
    }
}

proptest! {
    #[test]
    fn scalarised_vector_gae_matches_scalar_gae(
        steps in prop::collection::vec(((-1.0f64..1.0, -1.0f64..0.0), (-2.0f64..2.0, -5.0f64..0.0)), 1..30),
        w in 0.0f64..=1.0,
        lambda in 0.0f64..=1.0,
        boot in (-2.0f64..2.0, -5.0f64..0.0),
    ) {
        let rewards: Vec<[f64; 2]> = steps.iter().map(|s| [s.0 .0, s.0 .1]).collect();
        let values: Vec<[f64; 2]> = steps.iter().map(|s| [s.1 .0, s.1 .1]).collect();
        let omega = PreferenceVector::from_space_weight(w);
        let t = traj_from(rewards.clone(), values.clone(), omega, false, [boot.0, boot.1]);
        let rec = vector_gae(&t, 1.0, lambda);
        let sr: Vec<f64> = rewards.iter().map(|r| w * r[0] + (1.0 - w) * r[1]).collect();
        let sv: Vec<f64> = values.iter().map(|v| w * v[0] + (1.0 - w) * v[1]).collect();
        let scalar = gae(&sr, &sv, w * boot.0 + (1.0 - w) * boot.1, 1.0, lambda);
        for (a, b) in rec.scalarized.iter().zip(&scalar) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        for (t, s) in rec.returns.iter().enumerate() {
            prop_assert_eq!(s[0], rec.advantages[t][0] + values[t][0]);
        }
    }
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        envs_per_iter: 4,
        gae_step: 6,
        update_epochs: 2,
        pref_grid_size: 5,
        lr: 1e-3,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn trainer(config: TrainConfig) -> Trainer {
    let net = Network::new(NetConfig { n_ems: 8, ..small_net(5, 1) }).unwrap();
    Trainer::new(net, ctx(5, 1), config).unwrap()
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let mut t = trainer(tiny_config());
    t.config.lr = 0.0;
    let before = t.net.params.flat();
    for _ in 0..2 {
        t.train_iteration().unwrap();
    }
    assert_eq!(t.net.params.flat(), before);
    assert_eq!(t.iteration(), 2);
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let run = || {
        let mut t = trainer(tiny_config());
        let stats: Vec<Vec<String>> = (0..2).map(|_| t.train_iteration().unwrap().record()).collect();
        (t.net.params.flat(), stats)
    };
    let (pa, sa) = run();
    let (pb, sb) = run();
    assert_eq!(pa, pb);
    assert_eq!(sa, sb);
    let mut other = trainer(TrainConfig { seed: 4, ..tiny_config() });
    other.train_iteration().unwrap();
    other.train_iteration().unwrap();
    assert_ne!(other.net.params.flat(), pa);
}

#[test]
fn collected_steps_carry_the_episode_preference() {
    let mut t = trainer(TrainConfig { gae_step: 20, ..tiny_config() });
    let (trajs, finished) = t.collect().unwrap();
    assert!(!finished.is_empty());
    let mut steps = 0;
    for traj in &trajs {
        for s in &traj.steps {
            assert_eq!(s.input.omega, traj.omega.as_array());
            assert!(s.input.mask[s.action]);
            assert!(s.log_prob <= 0.0);
        }
        steps += traj.steps.len();
        if traj.terminal {
            assert_eq!(traj.bootstrap, [0.0, 0.0]);
        }
    }
    assert_eq!(steps, 20 * 4);
}

#[test]
fn non_finite_update_restores_the_previous_state() {
    let mut t = trainer(tiny_config());
    let (trajs, _) = t.collect().unwrap();
    let mut samples = t.samples(trajs);
    let before = t.checkpoint();
    samples[3].target = [f64::NAN, 0.0];
    let err = t.update(&samples, &mut seeded(0)).unwrap_err();
    assert!(matches!(err, LearnError::NonFinite(_)), "{err}");
    assert_eq!(t.checkpoint(), before);
}

#[test]
fn critic_loss_falls_on_a_fixed_batch() {
    let cfg = TrainConfig {
        entropy_coef: 0.0,
        advantage_norm: AdvantageNorm::None,
        update_epochs: 1,
        batch_size: 64,
        lr: 3e-3,
        ..tiny_config()
    };
    let mut t = trainer(cfg);
    let (trajs, _) = t.collect().unwrap();
    let mut samples = t.samples(trajs);
    for s in &mut samples {
        s.advantage = 0.0;
    }
    let mut rng = seeded(1);
    let first = t.update(&samples, &mut rng).unwrap().value_loss;
    let mut last = first;
    for _ in 0..49 {
        last = t.update(&samples, &mut rng).unwrap().value_loss;
    }
    assert!(last < 0.5 * first, "value loss {first} -> {last}");
}

#[test]
fn clipped_ratio_blocks_the_policy_gradient() {
    let net = Network::new(small_net(5, 2)).unwrap();
    let input = random_input(4, 1, 8);
    let out = net.forward(&input).unwrap();
    let action = out.argmax().unwrap();
    let logp = out.log_probs()[action];
    let cfg = TrainConfig { value_coef: 0.0, entropy_coef: 0.0, clip_eps: 0.2, ..TrainConfig::default() };
    let sample = |old: f64| Sample {
        input: input.clone(),
        action,
        old_log_prob: old,
        omega: input.omega,
        advantages: [0.0, 0.0],
        advantage: 1.0,
        target: [0.0, 0.0],
    };
    let grad = |s: &Sample, adv: f64| {
        let mut t = Tape::new(&net.params.tensors);
        let l = sample_loss(&net, &mut t, s, adv, &cfg).unwrap();
        net.backward(&t, l.total).unwrap()
    };
    // ratio e^0.5 > 1.2 with a positive advantage: no further push
    let clipped = grad(&sample(logp - 0.5), 1.0);
    assert!(clipped.iter().all(|g| *g == 0.0));
    // the same ratio with a negative advantage still pulls back
    let active = grad(&sample(logp - 0.5), -1.0);
    assert!(active.iter().any(|g| *g != 0.0));
    let inside = grad(&sample(logp), 1.0);
    assert!(inside.iter().any(|g| *g != 0.0));
}

#[test]
fn resume_restores_parameters_and_iteration() {
    let mut t = trainer(tiny_config());
    t.train_iteration().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    t.checkpoint().save(&path).unwrap();
    let ckpt = Checkpoint::load(&path).unwrap();
    let mut r = Trainer::resume(&ckpt, ctx(5, 1)).unwrap();
    assert_eq!(r.iteration(), 1);
    assert_eq!(r.net.params.flat(), t.net.params.flat());
    assert_eq!(r.checkpoint(), t.checkpoint());
    r.train_iteration().unwrap();
    assert_eq!(r.iteration(), 2);

    let bare = Checkpoint::from_network(&t.net, None);
    assert!(matches!(Trainer::resume(&bare, ctx(5, 1)), Err(LearnError::Checkpoint(_))));
    assert!(Trainer::resume(&ckpt, ctx(5, 2)).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let net = || Network::new(small_net(5, 1)).unwrap();
    for cfg in [
        TrainConfig { lr: 0.0, ..TrainConfig::default() },
        TrainConfig { gamma: 1.5, ..TrainConfig::default() },
        TrainConfig { pref_grid_size: 1, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
    ] {
        assert!(Trainer::new(net(), ctx(5, 1), cfg).is_err());
    }
}
