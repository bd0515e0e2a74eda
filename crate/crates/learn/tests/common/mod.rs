#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use stpack_core::env::{EnvConfig, EnvContext, EnvState, PreferenceVector};
use stpack_core::geometry::BinDims;
use stpack_core::rng::seeded;
use stpack_learn::net::{NetConfig, NetInput};

pub fn ctx(side: u32, buffer: usize) -> Arc<EnvContext> {
    EnvContext::new(EnvConfig::new(BinDims::cube(side).unwrap()).with_buffer(buffer)).unwrap()
}

pub fn small_net(n_units: usize, seed: u64) -> NetConfig {
    NetConfig { d_model: 8, n_heads: 2, d_ff: 12, n_blocks: 2, n_ems: 8, n_units, seed }
}

/// A state a few random steps into an episode on a 5³ bin.
pub fn random_state(seed: u64, buffer: usize) -> EnvState {
    let mut rng = seeded(seed ^ 0xABCD);
    let omega = PreferenceVector::from_space_weight(rng.gen_range(0.0..1.0));
    let mut s = EnvState::reset(ctx(5, buffer), seed, omega).unwrap();
    for _ in 0..rng.gen_range(0..4) {
        let acts: Vec<usize> = s.feasible_actions().collect();
        if acts.len() <= 1 {
            break;
        }
        s.step(acts[rng.gen_range(0..acts.len())]).unwrap();
    }
    s
}

pub fn random_input(seed: u64, buffer: usize, n_ems: usize) -> NetInput {
    NetInput::from_state(&random_state(seed, buffer), n_ems)
}
