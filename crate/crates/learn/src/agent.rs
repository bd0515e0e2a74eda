use std::sync::Arc;

use rand::Rng;
use stpack_core::env::{EnvState, PreferenceVector};
use stpack_core::policies::SelectionPolicy;
use stpack_core::rng::SimRng;

use crate::net::{NetInput, NetOutput, Network};

/// Samples from `log_probs` (masked entries are `-inf`).
pub fn sample_action(log_probs: &[f64], rng: &mut SimRng) -> Option<usize> {
    let valid: Vec<usize> = (0..log_probs.len()).filter(|&i| log_probs[i] > f64::NEG_INFINITY).collect();
    let last = *valid.last()?;
    let mut u: f64 = rng.gen();
    for &i in &valid {
        u -= log_probs[i].exp();
        if u < 0.0 {
            return Some(i);
        }
    }
    Some(last)
}

/// The network as a selection policy: argmax when greedy, otherwise a
/// sample. A forward-pass failure ends the episode.
#[derive(Debug, Clone)]
pub struct NetPolicy {
    pub net: Arc<Network>,
    pub greedy: bool,
    /// Fixed preference; the episode's preference when `None`.
    pub omega: Option<PreferenceVector>,
}

impl NetPolicy {
    pub fn greedy(net: Arc<Network>) -> Self {
        Self { net, greedy: true, omega: None }
    }

    pub fn evaluate(&self, state: &EnvState) -> Option<NetOutput> {
        let mut input = NetInput::from_state(state, self.net.config().n_ems);
        if let Some(w) = self.omega {
            input.omega = w.as_array();
        }
        self.net.forward(&input).ok()
    }
}

impl SelectionPolicy for NetPolicy {
    fn name(&self) -> &str {
        "learned"
    }

    fn select(&self, state: &EnvState, rng: &mut SimRng) -> Option<usize> {
        let out = self.evaluate(state)?;
        if self.greedy {
            out.argmax()
        } else {
            sample_action(&out.log_probs(), rng)
        }
    }
}
