//! Multi-agent high-altitude balloon (HAB) area coverage.
//!
//! The crate is organised bottom-up:
//!
//! - [`windfield`]: truth and forecast wind queries over `(x, y, altitude, t)`.
//! - [`dynamics`]: per-agent stochastic altitude control and wind advection.
//! - [`environment`]: the parallel multi-agent episode engine with the
//!   observation, global-state and team-reward definitions.
//! - [`trace`]: line-oriented episode traces and their replay.
//! - [`qmix`]: the CTDE learner (agent networks, monotonic mixer, replay,
//!   training loop, checkpoints).
//! - [`baseline`]: Voronoi partitioning with Lloyd's relaxation plus a greedy
//!   wind-alignment altitude controller.
//! - [`metrics`]: time-within-region, separation and coverage statistics.
//!
//! Distances are kilometres in a flat frame centred on the coverage area,
//! altitudes are metres, time is minutes, wind speeds are m/s.

pub mod baseline;
pub mod controller;
pub mod dynamics;
pub mod environment;
pub mod error;
pub mod metrics;
pub mod qmix;
pub mod rng;
pub mod trace;
pub mod windfield;

pub use error::{Error, Result};
