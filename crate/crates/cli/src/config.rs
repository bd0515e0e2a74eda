//! Run configuration: a JSON document whose keys can each be overridden by
//! a command-line flag. The resolved form is echoed next to the outputs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use serde::{Deserialize, Serialize};
use stpack_core::env::{EnvConfig, EnvContext, PreferenceVector};
use stpack_core::geometry::BinDims;
use stpack_core::items::{Face, FaceMask, StreamSpec, TimeCostProfile};
use stpack_core::policies::MctsConfig;
use stpack_learn::{NetConfig, TrainConfig};

use crate::CliError;

/// Default output root when neither `--out` nor the config sets one.
pub const OUT_ENV: &str = "STPACK_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Named(String),
    Custom(TimeCostProfile),
}

impl ProfileSpec {
    pub fn resolve(&self) -> Result<TimeCostProfile, CliError> {
        match self {
            ProfileSpec::Named(n) => TimeCostProfile::by_name(n)
                .ok_or_else(|| CliError::Config(format!("unknown time profile '{n}' (known: simulation, robot)"))),
            ProfileSpec::Custom(p) => Ok(p.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSpec {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_blocks: usize,
}

impl Default for NetSpec {
    fn default() -> Self {
        let d = NetConfig::default();
        Self { d_model: d.d_model, n_heads: d.n_heads, d_ff: d.d_ff, n_blocks: d.n_blocks }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub bin: [u32; 3],
    pub buffer: usize,
    /// Item side range; `[min/10, min/2]` of the bin when absent.
    pub item_range: Option<[u32; 2]>,
    pub profile: ProfileSpec,
    pub placer: String,
    pub faces: Vec<Face>,
    pub n_ems: usize,
    pub policy: String,
    /// Space weight of the evaluation preference.
    pub omega: f64,
    pub mcts: MctsConfig,
    pub net: NetSpec,
    pub train: TrainConfig,
    pub checkpoint_every: u64,
    pub episodes: usize,
    pub grid: usize,
    pub policies: Vec<String>,
    pub fractions: Vec<f64>,
    pub checkpoint: Option<PathBuf>,
    /// JSON-lines item file replayed in every episode.
    pub items: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            bin: [10, 10, 10],
            buffer: 1,
            item_range: None,
            profile: ProfileSpec::Named("simulation".into()),
            placer: "dblf".into(),
            faces: Face::ALL.to_vec(),
            n_ems: 64,
            policy: "scalar-greedy".into(),
            omega: 0.5,
            mcts: MctsConfig::default(),
            net: NetSpec::default(),
            train: TrainConfig::default(),
            checkpoint_every: 10,
            episodes: 100,
            grid: 50,
            policies: vec!["top-face".into(), "space-greedy".into(), "time-greedy".into(), "mcts".into()],
            fractions: vec![0.0, 25.0, 50.0, 75.0, 100.0],
            checkpoint: None,
            items: None,
            out: None,
        }
    }
}

/// Flags shared by every command; each overrides the config key of the
/// same name.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON configuration file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Bin extents `L,W,H`.
    #[arg(long, value_delimiter = ',')]
    pub bin: Option<Vec<u32>>,
    #[arg(long)]
    pub buffer: Option<usize>,
    /// Item side range `LO,HI`.
    #[arg(long, value_delimiter = ',')]
    pub item_range: Option<Vec<u32>>,
    /// `simulation` or `robot`.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub placer: Option<String>,
    /// Allowed grasp faces, e.g. `top,front,left`.
    #[arg(long, value_delimiter = ',')]
    pub faces: Option<Vec<String>>,
    #[arg(long)]
    pub n_ems: Option<usize>,
    #[arg(long)]
    pub policy: Option<String>,
    /// Space weight of the preference (time weight is `1 - omega`).
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub simulations: Option<usize>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub policies: Option<Vec<String>>,
    /// Percentages of variable-shaped items.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub items: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub envs: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Output directory; defaults to `$STPACK_OUT/<command>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("bad config {}: {e}", path.display())))
    }

    /// File (if any) with flags applied on top.
    pub fn resolve(o: &Overrides) -> Result<Self, CliError> {
        let mut c = match &o.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => {
                $(if let Some(v) = o.$flag.clone() { $field = v; })*
            };
        }
        set! {
            seed => c.seed,
            buffer => c.buffer,
            placer => c.placer,
            n_ems => c.n_ems,
            policy => c.policy,
            omega => c.omega,
            simulations => c.mcts.simulations,
            episodes => c.episodes,
            grid => c.grid,
            policies => c.policies,
            fractions => c.fractions,
            iterations => c.train.iterations,
            lr => c.train.lr,
            envs => c.train.envs_per_iter,
            d_model => c.net.d_model,
            checkpoint_every => c.checkpoint_every,
        }
        if let Some(b) = &o.bin {
            let b: [u32; 3] = b.as_slice().try_into().map_err(|_| CliError::Config("--bin takes L,W,H".into()))?;
            c.bin = b;
        }
        if let Some(r) = &o.item_range {
            let r: [u32; 2] = r.as_slice().try_into().map_err(|_| CliError::Config("--item-range takes LO,HI".into()))?;
            c.item_range = Some(r);
        }
        if let Some(p) = &o.profile {
            c.profile = ProfileSpec::Named(p.clone());
        }
        if let Some(fs) = &o.faces {
            c.faces = fs
                .iter()
                .map(|s| Face::parse(s).ok_or_else(|| CliError::Config(format!("unknown face '{s}'"))))
                .collect::<Result<_, _>>()?;
        }
        if o.checkpoint.is_some() {
            c.checkpoint = o.checkpoint.clone();
        }
        if o.items.is_some() {
            c.items = o.items.clone();
        }
        if o.out.is_some() {
            c.out = o.out.clone();
        }
        c.train.seed = c.seed;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.episodes == 0 {
            return Err(CliError::Config("episodes must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(CliError::Config(format!("omega must be in [0, 1], got {}", self.omega)));
        }
        if self.faces.is_empty() {
            return Err(CliError::Config("at least one face must be allowed".into()));
        }
        self.mcts.validate().map_err(CliError::Config)?;
        self.env_config()?;
        Ok(())
    }

    pub fn preference(&self) -> PreferenceVector {
        PreferenceVector::from_space_weight(self.omega)
    }

    pub fn face_mask(&self) -> FaceMask {
        FaceMask::only(&self.faces)
    }

    pub fn env_config(&self) -> Result<EnvConfig, CliError> {
        let [l, w, h] = self.bin;
        let dims = BinDims::new(l, w, h).map_err(|e| CliError::Config(e.to_string()))?;
        let mut env = EnvConfig::new(dims).with_buffer(self.buffer);
        if let Some([lo, hi]) = self.item_range {
            env.stream = StreamSpec::new(lo, hi);
        }
        env.profile = self.profile.resolve()?;
        env.placer = self.placer.clone();
        env.n_ems = self.n_ems;
        env.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(env)
    }

    pub fn context(&self) -> Result<Arc<EnvContext>, CliError> {
        EnvContext::new(self.env_config()?).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            d_model: self.net.d_model,
            n_heads: self.net.n_heads,
            d_ff: self.net.d_ff,
            n_blocks: self.net.n_blocks,
            n_ems: self.n_ems,
            n_units: 5 * self.buffer,
            seed: self.seed,
        }
    }

    pub fn out_dir(&self, command: &str) -> PathBuf {
        match &self.out {
            Some(p) => p.clone(),
            None => {
                let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
                root.join(command)
            }
        }
    }
}
