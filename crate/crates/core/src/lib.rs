//! Relative frame-transform estimation between two robots from onboard
//! odometry and inter-robot range measurements.
//!
//! The numerical core is generic over [`Real`] (`f32`/`f64`); the aliases
//! below fix it to `f64`, which is what the simulation and file layers use.

pub mod error;
pub mod estimators;
pub mod fisher;
pub mod geometry;
pub mod io;
pub mod measurement;
pub mod num;
pub mod simulation;
pub mod solvers;

pub use error::{Error, Result};
pub use num::Real;

pub type Pose = geometry::Pose<f64>;
pub type Transform = geometry::Transform4DoF<f64>;
pub type LeverArm = geometry::LeverArm<f64>;
pub type SyncedDataset = measurement::SyncedDataset<f64>;
pub type SyncedSample = measurement::SyncedSample<f64>;
pub type RangeSample = measurement::RangeSample<f64>;
pub type EstimateReport = estimators::EstimateReport<f64>;
pub type EstimatorOptions = estimators::EstimatorOptions<f64>;
pub type FimReport = fisher::FimReport<f64>;
