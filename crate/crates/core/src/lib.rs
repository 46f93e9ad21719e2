//! Informative path planning for active weed classification with a UAV.
//!
//! The crate keeps a log-odds occupancy grid of weed presence, models a down-looking
//! classifier whose confidence fades with altitude, and plans adaptive flights that
//! maximize information gained per second of flight: greedy viewpoint selection on a
//! multiresolution lattice, snap-minimal polynomial trajectories, and CMA-ES refinement
//! of the resulting chain. Lawnmower coverage and a RIG-tree planner serve as
//! baselines, and [`harness`] runs seeded Monte-Carlo comparisons of all of them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cmaes;
pub mod environment;
pub mod error;
pub mod gridmap;
pub mod harness;
pub mod metrics;
pub mod mission;
pub mod planner;
pub mod sensor;
pub mod trajectory;

pub use error::{Error, Result};

/// World position or vector in metres.
pub type Vec3 = nalgebra::Vector3<f64>;
