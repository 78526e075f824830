//! Handover optimization for cellular-connected drones.
//!
//! The crate builds a binned RSRP radio map over a service area, generates
//! fixed drone routes, and learns handover policies that trade the number of
//! handovers against serving-cell signal strength:
//!
//! - [`radio_env`]: synthetic or imported RSRP samples, binning, normalization.
//! - [`trajectory`]: 8-direction waypoint routes.
//! - [`mdp`]: the handover decision process (state, candidates, reward, step).
//! - [`tabular`]: tabular Q-learning.
//! - [`nn`]: a small MLP with manual backpropagation and RMSprop.
//! - [`dqn`]: deep Q-learning with replay and a periodically synced target network.
//! - [`eval`]: flights, the strongest-cell baseline, an exact DP oracle, CDFs.
//! - [`experiment`]: multi-route evaluation of the schemes above.
//! - [`config`] and [`cli`]: run configuration and the `uav-ho` command line.
//!
//! The `examples/` directory has one runnable program per capability.

pub mod cli;
pub mod config;
pub mod dqn;
mod error;
pub mod eval;
pub mod experiment;
pub mod mdp;
pub mod nn;
pub mod radio_env;
pub mod rng;
pub mod tabular;
pub mod trajectory;

pub use error::{Error, Result};
