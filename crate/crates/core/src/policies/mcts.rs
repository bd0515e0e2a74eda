//! UCT search over item–face actions.
//!
//! Each decision builds a fresh tree whose nodes hold full environment
//! copies. Node values are scalarised returns (sum of `ω · r` from the edge
//! into the node onward, γ = 1). Before searching, sampled item streams are
//! reseeded from the policy's generator so rollouts see plausible arrivals
//! rather than the true ones; replayed streams are treated as known.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{random_action, scalar_greedy_action, SelectionPolicy};
use crate::env::{scalarize, EnvState, PreferenceVector};
use crate::items::FaceMask;
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutKind {
    Random,
    ScalarGreedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MctsConfig {
    pub simulations: usize,
    pub uct_c: f64,
    pub rollout_depth: usize,
    pub rollout: RolloutKind,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            simulations: 50,
            uct_c: std::f64::consts::SQRT_2,
            rollout_depth: 10,
            rollout: RolloutKind::ScalarGreedy,
        }
    }
}

impl MctsConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.simulations == 0 {
            return Err("mcts simulations must be at least 1".into());
        }
        if !(self.uct_c > 0.0) {
            return Err(format!("mcts uct_c must be positive, got {}", self.uct_c));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Mcts {
    pub config: MctsConfig,
    /// Fixed preference; the episode's preference when `None`.
    pub omega: Option<PreferenceVector>,
    pub mask: FaceMask,
}

impl Mcts {
    pub fn new(config: MctsConfig) -> Self {
        Self { config, omega: None, mask: FaceMask::all() }
    }
}

struct Node {
    state: EnvState,
    /// Action taken from the parent and its scalarised reward.
    action: usize,
    reward: f64,
    parent: Option<usize>,
    children: Vec<usize>,
    untried: Vec<usize>,
    visits: u32,
    value_sum: f64,
}

impl Node {
    fn new(state: EnvState, action: usize, reward: f64, parent: Option<usize>, mask: &FaceMask) -> Self {
        let untried = state
            .units()
            .iter()
            .enumerate()
            .filter(|(_, u)| u.feasible() && mask.allows(u.face))
            .map(|(i, _)| i)
            .collect();
        Self { state, action, reward, parent, children: Vec::new(), untried, visits: 0, value_sum: 0.0 }
    }

    fn mean(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.value_sum / self.visits as f64
        }
    }

    fn is_leaf(&self) -> bool {
        self.children.is_empty() && self.untried.is_empty()
    }
}

impl Mcts {
    fn rollout(&self, mut state: EnvState, omega: PreferenceVector, rng: &mut SimRng) -> f64 {
        let mut ret = 0.0;
        for _ in 0..self.config.rollout_depth {
            if state.is_done() {
                break;
            }
            let action = match self.config.rollout {
                RolloutKind::Random => random_action(&state, &self.mask, rng),
                RolloutKind::ScalarGreedy => scalar_greedy_action(&state, omega, &self.mask),
            };
            let Some(a) = action else { break };
            let t = state.step(a).expect("rollout picks feasible actions");
            ret += scalarize(omega, t.reward);
        }
        ret
    }

    /// Child maximising UCT with mean values rescaled to `[0, 1]` over the
    /// siblings, so the exploration constant is independent of reward scale.
    fn best_uct(&self, tree: &[Node], node: usize) -> usize {
        let children = &tree[node].children;
        let (lo, hi) = children.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| {
            let m = tree[c].mean();
            (lo.min(m), hi.max(m))
        });
        let span = hi - lo;
        let ln_n = (tree[node].visits.max(1) as f64).ln();
        let mut best = children[0];
        let mut best_score = f64::NEG_INFINITY;
        for &c in children {
            let q = if span > 0.0 { (tree[c].mean() - lo) / span } else { 0.5 };
            let score = q + self.config.uct_c * (ln_n / tree[c].visits as f64).sqrt();
            if score > best_score {
                best_score = score;
                best = c;
            }
        }
        best
    }

    pub fn search(&self, state: &EnvState, rng: &mut SimRng) -> Option<usize> {
        let omega = self.omega.unwrap_or(state.omega());
        let mut root_state = state.clone();
        root_state.resample_future(crate::rng::seeded(rng.gen()));
        let mut tree = vec![Node::new(root_state, usize::MAX, 0.0, None, &self.mask)];
        if tree[0].untried.is_empty() {
            return None;
        }
        if tree[0].untried.len() == 1 {
            return Some(tree[0].untried[0]);
        }

        for _ in 0..self.config.simulations {
            let mut node = 0;
            while tree[node].untried.is_empty() && !tree[node].children.is_empty() {
                node = self.best_uct(&tree, node);
            }
            let mut leaf_value = 0.0;
            if !tree[node].untried.is_empty() {
                let k = rng.gen_range(0..tree[node].untried.len());
                let action = tree[node].untried.swap_remove(k);
                let mut next = tree[node].state.clone();
                let t = next.step(action).expect("untried actions are feasible");
                let child = Node::new(next, action, scalarize(omega, t.reward), Some(node), &self.mask);
                let idx = tree.len();
                let rollout_state = if child.is_leaf() { None } else { Some(child.state.clone()) };
                tree.push(child);
                tree[node].children.push(idx);
                node = idx;
                if let Some(s) = rollout_state {
                    leaf_value = self.rollout(s, omega, rng);
                }
            }
            // back up the return from each node onward
            let mut g = leaf_value;
            let mut cur = Some(node);
            while let Some(n) = cur {
                g += tree[n].reward;
                tree[n].visits += 1;
                tree[n].value_sum += g;
                cur = tree[n].parent;
            }
        }

        tree[0]
            .children
            .iter()
            .map(|&c| &tree[c])
            .max_by(|a, b| {
                a.visits
                    .cmp(&b.visits)
                    .then(a.mean().total_cmp(&b.mean()))
                    .then(b.action.cmp(&a.action))
            })
            .map(|n| n.action)
    }
}

impl SelectionPolicy for Mcts {
    fn name(&self) -> &str {
        "mcts"
    }

    fn select(&self, state: &EnvState, rng: &mut SimRng) -> Option<usize> {
        self.search(state, rng)
    }
}
