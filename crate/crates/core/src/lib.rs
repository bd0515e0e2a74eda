//! Semi-online 3D bin packing with item reorientation and per-face
//! operational time.
//!
//! At each step a robot chooses one of the `N` buffered items and one of its
//! five graspable faces; a placement policy decides where the item goes.
//! Two objectives compete: space utilisation and cumulative handling time.
//!
//! - [`geometry`]: grid bins, gravity, stability, empty maximal spaces.
//! - [`items`]: items, faces, surface categories, time profiles, streams.
//! - [`placement`]: pluggable placers; deep-bottom-left-fill by default.
//! - [`env`]: the vector-reward MDP over item–face units.
//! - [`policies`]: greedy baselines, random, and UCT search.
//! - [`eval`]: seeded evaluation, Pareto fronts, sweeps, CSV/SVG output.

pub mod env;
pub mod eval;
pub mod geometry;
pub mod items;
pub mod placement;
pub mod policies;
pub mod rng;

pub use env::{EnvConfig, EnvContext, EnvState, PreferenceVector, VectorReward};
pub use geometry::{BinDims, BinState, Extents, Flb};
pub use items::{Face, Item, TimeCostProfile};
