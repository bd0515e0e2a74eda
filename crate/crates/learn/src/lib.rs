//! Learned item–face selection: a small attention network with its own
//! reverse-mode differentiation, and multi-objective PPO to train it.
//!
//! - [`tensor`] / [`tape`]: matrices and the differentiation tape.
//! - [`net`]: the selection network and its inputs.
//! - [`checkpoint`]: JSON checkpoints.
//! - [`agent`]: the network as a [`stpack_core::policies::SelectionPolicy`].
//! - [`train`]: vector GAE, losses, Adam and the training loop.

pub mod agent;
pub mod checkpoint;
pub mod net;
pub mod tape;
pub mod tensor;
pub mod train;

pub use agent::NetPolicy;
pub use checkpoint::Checkpoint;
pub use net::{NetConfig, NetInput, NetOutput, Network};
pub use train::{TrainConfig, Trainer};

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training aborted at iteration {iteration}: {reason}")]
    Aborted { iteration: u64, reason: String },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Env(#[from] stpack_core::env::EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
