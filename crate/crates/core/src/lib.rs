//! Last-exit times of consistent estimators.
//!
//! Simulation of the Gaussian limit processes ([`gp_sim`]), analytic laws and
//! tail bounds for their suprema ([`limit_laws`]), tail statistics of error
//! trajectories ([`last_time`]), Nelson–Aalen band sizing ([`survival`]) and
//! risk-averse SAA sizing ([`saa`]). [`verify`] runs the end-to-end checks.

pub mod gp_sim;
pub mod last_time;
pub mod limit_laws;
pub mod mc;
pub mod rng;
pub mod saa;
pub mod survival;
pub mod verify;

pub use gp_sim::{CovMatrix, Grid1D, PathGrid, SheetGrid, SupAbs, SupSampler};
pub use last_time::{ErrorTrajectory, TailStats};
pub use limit_laws::{QuantileEstimate, SizingConvention, TailBound};
pub use rng::SeedSpec;
pub use saa::{RiskProblem, SaaResult};
pub use survival::{BandSpec, CensoredSample, HazardCurve};
