//! The multi-objective packing MDP.
//!
//! A state holds the bin, the buffer and the `5N` item–face units derived
//! from them. Actions index units item-major in [`Face::ALL`] order. Each
//! step yields a two-component reward `[space, time]`: the placed volume as
//! a fraction of the bin and the negated operational time divided by the
//! profile's largest single-placement time.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{BinDims, BinState, Extents, GeometryError};
use crate::items::{
    default_item_range, face_dims, op_time, Buffer, Face, FaceMask, ItemError, ItemStream, PerFace,
    StreamSpec, TimeCostProfile,
};
use crate::placement::{placer_by_name, PlacementDecision, PlacementPolicy, PLACERS};
use crate::rng::{self, streams};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Items(#[from] ItemError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("action {action} out of range for {units} units")]
    ActionOutOfRange { action: usize, units: usize },
    #[error("action {0} selects a masked unit")]
    MaskedAction(usize),
    #[error("episode already finished")]
    Done,
}

/// Convex weights over the space and time objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceVector {
    pub w_space: f64,
    pub w_time: f64,
}

impl PreferenceVector {
    pub fn new(w_space: f64, w_time: f64) -> Result<Self, EnvError> {
        let ok = w_space >= 0.0 && w_time >= 0.0 && ((w_space + w_time) - 1.0).abs() <= 1e-9;
        if !ok {
            return Err(EnvError::Config(format!("invalid preference ({w_space}, {w_time})")));
        }
        Ok(Self { w_space, w_time })
    }

    /// `(w, 1 - w)`; `w` is clamped to `[0, 1]`.
    pub fn from_space_weight(w: f64) -> Self {
        let w = w.clamp(0.0, 1.0);
        Self { w_space: w, w_time: 1.0 - w }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.w_space, self.w_time]
    }
}

/// `k` preferences with the space weight evenly spaced on `[0, 1]`.
pub fn preference_grid(k: usize) -> Result<Vec<PreferenceVector>, EnvError> {
    if k < 2 {
        return Err(EnvError::Config(format!("preference grid needs at least 2 points, got {k}")));
    }
    Ok((0..k)
        .map(|i| {
            let w = i as f64 / (k - 1) as f64;
            PreferenceVector { w_space: w, w_time: 1.0 - w }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VectorReward {
    pub space: f64,
    pub time: f64,
}

impl VectorReward {
    pub fn new(space: f64, time: f64) -> Self {
        Self { space, time }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.space, self.time]
    }
}

impl std::ops::Add for VectorReward {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.space + o.space, self.time + o.time)
    }
}

/// Linear scalarisation `ω · r`.
pub fn scalarize(omega: PreferenceVector, r: VectorReward) -> f64 {
    omega.w_space * r.space + omega.w_time * r.time
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub bin: BinDims,
    pub buffer_size: usize,
    pub stream: StreamSpec,
    pub profile: TimeCostProfile,
    pub placer: String,
    pub face_mask: FaceMask,
    /// EMS sequence length fed to the network.
    pub n_ems: usize,
}

impl EnvConfig {
    /// Defaults for a bin: buffer of one, size range `[min/10, min/2]`,
    /// simulation time profile, DBLF placement, all faces, 64 EMS slots.
    pub fn new(bin: BinDims) -> Self {
        let (lo, hi) = default_item_range(bin);
        Self {
            bin,
            buffer_size: 1,
            stream: StreamSpec::new(lo, hi),
            profile: TimeCostProfile::simulation(),
            placer: "dblf".into(),
            face_mask: FaceMask::all(),
            n_ems: 64,
        }
    }

    pub fn with_buffer(mut self, n: usize) -> Self {
        self.buffer_size = n;
        self
    }

    pub fn n_units(&self) -> usize {
        5 * self.buffer_size
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        BinDims::new(self.bin.l, self.bin.w, self.bin.h)?;
        if self.buffer_size == 0 {
            return Err(EnvError::Config("buffer size must be at least 1".into()));
        }
        if self.n_ems == 0 {
            return Err(EnvError::Config("n_ems must be at least 1".into()));
        }
        self.stream.validate()?;
        self.profile.validate().map_err(EnvError::Config)?;
        if self.profile.max_time() <= 0.0 {
            return Err(EnvError::Config("time profile has no positive cost".into()));
        }
        if placer_by_name(&self.placer).is_none() {
            return Err(EnvError::Config(format!(
                "unknown placer '{}' (known: {})",
                self.placer,
                PLACERS.join(", ")
            )));
        }
        Ok(())
    }
}

/// Validated configuration with its resolved placer, shared by every state
/// of an episode.
#[derive(Debug)]
pub struct EnvContext {
    pub config: EnvConfig,
    pub placer: Arc<dyn PlacementPolicy>,
    /// Normaliser for the time reward.
    pub t_ref: f64,
}

impl EnvContext {
    pub fn new(config: EnvConfig) -> Result<Arc<Self>, EnvError> {
        config.validate()?;
        let placer = placer_by_name(&config.placer).expect("validated");
        Ok(Self::with_placer(config, placer))
    }

    /// Uses a caller-supplied placer instead of the named one.
    pub fn with_placer(config: EnvConfig, placer: Arc<dyn PlacementPolicy>) -> Arc<Self> {
        let t_ref = config.profile.max_time();
        Arc::new(Self { config, placer, t_ref })
    }
}

/// One selectable candidate: an item grasped by one face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemFaceUnit {
    /// Buffer slot; `None` for padding when the buffer has shrunk.
    pub slot: Option<usize>,
    pub item_id: u64,
    pub face: Face,
    pub eff_dims: Extents,
    pub decision: PlacementDecision,
    pub time_cost: f64,
    /// Face allowed by the environment's face mask.
    pub allowed: bool,
}

impl ItemFaceUnit {
    fn padding(face: Face) -> Self {
        Self {
            slot: None,
            item_id: 0,
            face,
            eff_dims: Extents::new(0, 0, 0),
            decision: PlacementDecision::INFEASIBLE,
            time_cost: 0.0,
            allowed: false,
        }
    }

    pub fn feasible(&self) -> bool {
        self.slot.is_some() && self.allowed && self.decision.feasible
    }

    pub fn is_padding(&self) -> bool {
        self.slot.is_none()
    }

    pub fn placed_dims(&self) -> Extents {
        self.decision.placed_dims(self.eff_dims)
    }

    /// Effective dims, predicted FLB and rotation flag, scaled by the bin.
    pub fn encoding(&self, bin: BinDims) -> [f64; 7] {
        if self.is_padding() {
            return [0.0; 7];
        }
        let s = bin.as_array().map(|v| v as f64);
        let d = self.eff_dims.as_array();
        let p = self.decision.flb.as_array();
        [
            d[0] as f64 / s[0],
            d[1] as f64 / s[1],
            d[2] as f64 / s[2],
            p[0] as f64 / s[0],
            p[1] as f64 / s[1],
            p[2] as f64 / s[2],
            if self.decision.rot { 1.0 } else { 0.0 },
        ]
    }
}

/// Expands the buffer into `5 * n_slots` units (item-major, faces in
/// [`Face::ALL`] order), padding missing items with masked units.
pub fn build_units(
    bin: &BinState,
    buffer: &Buffer,
    placer: &dyn PlacementPolicy,
    profile: &TimeCostProfile,
    mask: &FaceMask,
    n_slots: usize,
) -> Vec<ItemFaceUnit> {
    let mut units = Vec::with_capacity(5 * n_slots);
    for slot in 0..n_slots {
        let Some(item) = buffer.slots().get(slot) else {
            units.extend(Face::ALL.map(ItemFaceUnit::padding));
            continue;
        };
        // front/back and left/right share extents; place each shape once
        let mut cache: Vec<(Extents, PlacementDecision)> = Vec::with_capacity(3);
        for face in Face::ALL {
            let eff_dims = face_dims(item, face);
            let decision = match cache.iter().find(|(d, _)| *d == eff_dims) {
                Some(&(_, dec)) => dec,
                None => {
                    let dec = placer.place(bin, eff_dims);
                    cache.push((eff_dims, dec));
                    dec
                }
            };
            units.push(ItemFaceUnit {
                slot: Some(slot),
                item_id: item.id,
                face,
                eff_dims,
                decision,
                time_cost: op_time(item, face, profile),
                allowed: mask.allows(face),
            });
        }
    }
    units
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub reward: VectorReward,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct EnvState {
    ctx: Arc<EnvContext>,
    bin: BinState,
    buffer: Buffer,
    units: Vec<ItemFaceUnit>,
    omega: PreferenceVector,
    step_count: usize,
    done: bool,
    cum_time: f64,
    face_counts: PerFace<u32>,
    returns: VectorReward,
}

impl EnvState {
    /// Starts an episode with items drawn from sub-stream `ITEMS` of `seed`.
    pub fn reset(ctx: Arc<EnvContext>, seed: u64, omega: PreferenceVector) -> Result<Self, EnvError> {
        let stream = ItemStream::sampled(ctx.config.stream, rng::split(seed, streams::ITEMS))?;
        Ok(Self::with_stream(ctx, stream, omega))
    }

    pub fn with_stream(ctx: Arc<EnvContext>, stream: ItemStream, omega: PreferenceVector) -> Self {
        let buffer = Buffer::new(stream, ctx.config.buffer_size);
        let bin = BinState::new(ctx.config.bin);
        let mut s = Self {
            ctx,
            bin,
            buffer,
            units: Vec::new(),
            omega,
            step_count: 0,
            done: false,
            cum_time: 0.0,
            face_counts: PerFace::splat(0),
            returns: VectorReward::default(),
        };
        s.refresh_units();
        s
    }

    fn refresh_units(&mut self) {
        let c = &self.ctx.config;
        self.units = build_units(
            &self.bin,
            &self.buffer,
            self.ctx.placer.as_ref(),
            &c.profile,
            &c.face_mask,
            c.buffer_size,
        );
        self.done = !self.units.iter().any(ItemFaceUnit::feasible);
    }

    pub fn context(&self) -> &Arc<EnvContext> {
        &self.ctx
    }

    pub fn config(&self) -> &EnvConfig {
        &self.ctx.config
    }

    pub fn bin(&self) -> &BinState {
        &self.bin
    }

    pub fn buffer(&self) -> &Buffer {
        &self.buffer
    }

    pub fn units(&self) -> &[ItemFaceUnit] {
        &self.units
    }

    pub fn omega(&self) -> PreferenceVector {
        self.omega
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn face_counts(&self) -> PerFace<u32> {
        self.face_counts
    }

    /// Sum of vector rewards so far.
    pub fn returns(&self) -> VectorReward {
        self.returns
    }

    pub fn feasible_actions(&self) -> impl Iterator<Item = usize> + '_ {
        self.units.iter().enumerate().filter(|(_, u)| u.feasible()).map(|(i, _)| i)
    }

    pub fn action_mask(&self) -> Vec<bool> {
        self.units.iter().map(ItemFaceUnit::feasible).collect()
    }

    /// Fraction of the bin volume occupied.
    pub fn utilization(&self) -> f64 {
        self.bin.utilization()
    }

    /// Un-normalised operational time of all placements.
    pub fn total_time(&self) -> f64 {
        self.cum_time
    }

    pub fn t_ref(&self) -> f64 {
        self.ctx.t_ref
    }

    /// Reward that selecting `unit` would yield.
    pub fn unit_reward(&self, unit: &ItemFaceUnit) -> VectorReward {
        VectorReward::new(
            unit.eff_dims.volume() as f64 / self.ctx.config.bin.volume() as f64,
            -unit.time_cost / self.ctx.t_ref,
        )
    }

    pub fn unit_encoding(&self, action: usize) -> [f64; 7] {
        self.units[action].encoding(self.ctx.config.bin)
    }

    pub fn time_feature(&self, action: usize) -> f64 {
        self.units[action].time_cost / self.ctx.t_ref
    }

    /// Gives sampled item streams a fresh generator so that lookahead does
    /// not see the real future arrivals.
    pub fn resample_future(&mut self, rng: rng::SimRng) {
        self.buffer.stream_mut().reseed(rng);
    }

    pub fn step(&mut self, action: usize) -> Result<Transition, EnvError> {
        if self.done {
            return Err(EnvError::Done);
        }
        let unit = *self
            .units
            .get(action)
            .ok_or(EnvError::ActionOutOfRange { action, units: self.units.len() })?;
        if !unit.feasible() {
            return Err(EnvError::MaskedAction(action));
        }
        let slot = unit.slot.expect("feasible units have a slot");
        self.bin.place(unit.placed_dims(), unit.decision.flb, unit.item_id)?;
        self.buffer.take(slot);
        let reward = self.unit_reward(&unit);
        self.cum_time += unit.time_cost;
        self.face_counts[unit.face] += 1;
        self.returns = self.returns + reward;
        self.step_count += 1;
        self.refresh_units();
        Ok(Transition { reward, done: self.done })
    }

    /// Digest of the bin configuration (height map and placed boxes).
    pub fn state_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in self.bin.height_map() {
            h.update(v.to_le_bytes());
        }
        for b in self.bin.placed() {
            for v in b.flb.as_array().into_iter().chain(b.dims.as_array()) {
                h.update(v.to_le_bytes());
            }
            h.update(b.item_id.to_le_bytes());
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
