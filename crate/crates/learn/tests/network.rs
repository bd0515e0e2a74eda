mod common;

use std::rc::Rc;
use std::sync::Arc;

use proptest::prelude::*;
use stpack_core::env::PreferenceVector;
use stpack_core::eval::run_episode;
use stpack_learn::checkpoint::Checkpoint;
use stpack_learn::net::{NetConfig, NetInput, Network};
use stpack_learn::tape::Tape;
use stpack_learn::tensor::Matrix;
use stpack_learn::NetPolicy;

fn permute_rows(m: &Matrix, perm: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(m.rows, m.cols);
    for (i, &p) in perm.iter().enumerate() {
        out.row_mut(i).copy_from_slice(m.row(p));
    }
    out
}

fn close(a: f64, b: f64) -> bool {
    (a == b) || (a - b).abs() <= 1e-10 * (1.0 + a.abs().max(b.abs()))
}

fn net(seed: u64) -> Network {
    Network::new(common::small_net(10, seed)).unwrap()
}

#[test]
fn config_validation() {
    assert!(Network::new(NetConfig { d_model: 10, n_heads: 4, ..NetConfig::default() }).is_err());
    assert!(Network::new(NetConfig { n_blocks: 0, ..NetConfig::default() }).is_err());
    assert!(NetConfig::default().validate().is_ok());
}

#[test]
fn shape_mismatch_is_an_error() {
    let n = net(0);
    let mut input = common::random_input(0, 2, 8);
    input.ems_seq = Matrix::zeros(9, 6);
    assert!(n.forward(&input).is_err());
    let input = common::random_input(0, 3, 8);
    assert!(n.forward(&input).is_err());
}

#[test]
fn softmax_over_valid_units_sums_to_one() {
    for seed in 0..20 {
        let input = common::random_input(seed, 2, 8);
        let out = net(seed).forward(&input).unwrap();
        let lp = out.log_probs();
        let total: f64 = lp.iter().filter(|l| l.is_finite()).map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        for (l, &m) in out.logits.iter().zip(&input.mask) {
            assert_eq!(m, l.is_finite());
        }
        assert!(out.value.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn single_feasible_unit_gets_all_mass() {
    let mut input = common::random_input(5, 2, 8);
    let keep = input.mask.iter().position(|&m| m).unwrap();
    input.mask = (0..10).map(|i| i == keep).collect();
    let lp = net(5).forward(&input).unwrap().log_probs();
    assert_eq!(lp[keep], 0.0);
}

#[test]
fn zero_initialised_critic_outputs_its_bias() {
    let out = net(1).forward(&common::random_input(1, 2, 8)).unwrap();
    assert_eq!(out.value, [0.0, 0.0]);
}

#[test]
fn padded_unit_rows_embed_identically() {
    let n = net(2);
    let mut input = common::random_input(2, 2, 8);
    for r in 5..10 {
        input.unit_seq.row_mut(r).fill(0.0);
        input.time_seq.data[r] = 0.0;
        input.mask[r] = false;
    }
    let mut t = Tape::new(&n.params.tensors);
    let (_, u) = n.embed(&mut t, &input).unwrap();
    let u = t.value(u);
    for r in 6..10 {
        assert_eq!(u.row(r), u.row(5));
    }
}

#[test]
fn time_channel_changes_unit_embedding() {
    let n = net(3);
    let input = common::random_input(3, 2, 8);
    let mut doubled = input.clone();
    doubled.time_seq.data.iter_mut().for_each(|v| *v *= 2.0);
    doubled.time_seq.data[0] = 0.5;
    let emb = |i: &NetInput| {
        let mut t = Tape::new(&n.params.tensors);
        let (_, u) = n.embed(&mut t, i).unwrap();
        t.value(u).clone()
    };
    assert_ne!(emb(&input), emb(&doubled));
}

#[test]
fn single_token_self_attention_is_value_projection() {
    // with one key the attention weights are exactly 1
    let params = vec![Matrix::from_vec(1, 3, vec![0.3, -1.2, 2.0])];
    let mut t = Tape::new(&params);
    let x = t.param(0);
    let s = t.matmul_nt(x, x);
    let p = t.softmax_rows(s, Rc::from(vec![true]));
    assert_eq!(t.value(p).data, vec![1.0]);
    let y = t.matmul(p, x);
    assert_eq!(t.value(y), &params[0]);
}

#[test]
fn preference_conditioning_is_active() {
    let n = net(4);
    let mut a = common::random_input(4, 2, 8);
    a.omega = [0.5, 0.5];
    let mut b = a.clone();
    b.omega = [0.9, 0.1];
    assert_ne!(n.forward(&a).unwrap().logits, n.forward(&b).unwrap().logits);
}

#[test]
fn duplicate_unit_rows_share_logits() {
    let n = net(6);
    let mut input = common::random_input(6, 2, 8);
    let src = input.mask.iter().position(|&m| m).unwrap();
    let dst = (0..10).rev().find(|&i| i != src).unwrap();
    let (row, time) = (input.unit_seq.row(src).to_vec(), input.time_seq.data[src]);
    input.unit_seq.row_mut(dst).copy_from_slice(&row);
    input.time_seq.data[dst] = time;
    input.mask[dst] = true;
    let out = n.forward(&input).unwrap();
    assert!(close(out.logits[src], out.logits[dst]));
}

#[test]
fn extra_zero_ems_rows_change_nothing() {
    let n8 = net(7);
    let mut cfg16 = n8.config().clone();
    cfg16.n_ems = 16;
    let mut n16 = Network::new(cfg16).unwrap();
    n16.params = n8.params.clone();
    let mut compared = 0;
    for seed in 0..10 {
        let state = common::random_state(seed, 2);
        let small = NetInput::from_state(&state, 8);
        if small.ems_mask().iter().all(|&m| m) {
            continue; // truncated; the wider input would see more EMS
        }
        let wide = NetInput::from_state(&state, 16);
        let (a, b) = (n8.forward(&small).unwrap(), n16.forward(&wide).unwrap());
        for (x, y) in a.logits.iter().zip(&b.logits) {
            assert!(close(*x, *y), "{x} vs {y}");
        }
        assert!(close(a.value[0], b.value[0]) && close(a.value[1], b.value[1]));
        compared += 1;
    }
    assert!(compared >= 5);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    let mut n = net(8);
    // perturb away from initial values so every entry is nontrivial
    for t in &mut n.params.tensors {
        t.data.iter_mut().enumerate().for_each(|(i, v)| *v += (i as f64 * 0.618).sin() * 1e-3);
    }
    Checkpoint::from_network(&n, None).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap().network().unwrap();
    assert_eq!(loaded.params.flat(), n.params.flat());
    let input = common::random_input(8, 2, 8);
    let (a, b) = (n.forward(&input).unwrap(), loaded.forward(&input).unwrap());
    assert_eq!(a.logits.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.logits.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.value.map(f64::to_bits), b.value.map(f64::to_bits));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let mut c = Checkpoint::from_network(&net(9), None);
    c.params.pop();
    assert!(c.network().is_err());
    let mut c = Checkpoint::from_network(&net(9), None);
    c.version = 99;
    assert!(c.network().is_err());
}

#[test]
fn greedy_policy_runs_whole_episodes() {
    let ctx = common::ctx(5, 2);
    let policy = NetPolicy::greedy(Arc::new(net(10)));
    let omega = PreferenceVector::from_space_weight(0.5);
    let a = run_episode(&policy, &ctx, 3, omega, None).unwrap();
    let b = run_episode(&policy, &ctx, 3, omega, None).unwrap();
    assert!(a.num_items > 0);
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn unit_permutation_permutes_logits(seed in 0u64..1000, shift in 1usize..10) {
        let n = net(seed);
        let input = common::random_input(seed, 2, 8);
        let perm: Vec<usize> = (0..10).map(|i| (i + shift) % 10).collect();
        let mut p = input.clone();
        p.unit_seq = permute_rows(&input.unit_seq, &perm);
        p.time_seq = permute_rows(&input.time_seq, &perm);
        p.mask = perm.iter().map(|&i| input.mask[i]).collect();
        let (a, b) = (n.forward(&input).unwrap(), n.forward(&p).unwrap());
        for (i, &src) in perm.iter().enumerate() {
            prop_assert!(close(b.logits[i], a.logits[src]) || (b.logits[i] == a.logits[src]));
        }
        prop_assert!(close(a.value[0], b.value[0]) && close(a.value[1], b.value[1]));
    }

    #[test]
    fn ems_permutation_leaves_logits_unchanged(seed in 0u64..1000, shift in 1usize..8) {
        let n = net(seed);
        let input = common::random_input(seed, 2, 8);
        let perm: Vec<usize> = (0..8).map(|i| (i + shift) % 8).collect();
        let mut p = input.clone();
        p.ems_seq = permute_rows(&input.ems_seq, &perm);
        let (a, b) = (n.forward(&input).unwrap(), n.forward(&p).unwrap());
        for (x, y) in a.logits.iter().zip(&b.logits) {
            prop_assert!(close(*x, *y));
        }
    }
}
