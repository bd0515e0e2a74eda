//! JSON checkpoints: network configuration, flat parameters and, for
//! training runs, optimiser state. Floats round-trip exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::net::{NetConfig, Network};
use crate::train::{Adam, TrainConfig};
use crate::LearnError;

pub const FORMAT: &str = "stpack-policy";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: TrainConfig,
    /// Iterations completed.
    pub iteration: u64,
    pub adam: Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub net: NetConfig,
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainState>,
}

impl Checkpoint {
    pub fn from_network(net: &Network, train: Option<TrainState>) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            net: net.config().clone(),
            params: net.params.flat(),
            train,
        }
    }

    pub fn network(&self) -> Result<Network, LearnError> {
        if self.format != FORMAT {
            return Err(LearnError::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != VERSION {
            return Err(LearnError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        if !self.params.iter().all(|p| p.is_finite()) {
            return Err(LearnError::Checkpoint("non-finite parameter".into()));
        }
        let mut net = Network::new(self.net.clone())?;
        net.params.set_flat(&self.params)?;
        Ok(net)
    }

    /// Writes through a temporary file so a crash never leaves a torn
    /// checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            serde_json::to_writer(&mut f, self)?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LearnError> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
