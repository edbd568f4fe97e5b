//! Solvers for finite-horizon two-player zero-sum partially observable
//! stochastic games, built around their occupancy-game reformulation.
//!
//! The crate provides:
//! - a model format and exact belief filtering ([`model`]),
//! - occupancy-state algebra ([`occupancy`]),
//! - bounding value-function approximators ([`bounds`]),
//! - dense LP machinery and stage games ([`lp`]),
//! - the heuristic-search solver driver ([`hsvi`]),
//! - recursive-strategy extraction and evaluation ([`strategy`]),
//! - an exact sequence-form baseline ([`seqform`]),
//! - a Lipschitz-only solver variant ([`doo`]).

pub mod bounds;
pub mod doo;
pub mod hsvi;
pub mod lp;
pub mod model;
pub mod occupancy;
pub mod seqform;
pub mod strategy;

pub use model::{Belief, JointHistory, Player, PosgModel, PrivateHistory};
pub use occupancy::{DecisionRule, OccupancyState};
