//! Crowd-sourced radio map generation.
//!
//! Dead-reckoned trajectories with attached Wi-Fi scans are fused into one common
//! frame. A similarity → distance model is learnt from the trajectories themselves,
//! turned into range constraints between similar scans, and solved together with
//! odometry constraints as a robust pose graph. The fused scans form a reference
//! map for k-nearest-neighbour positioning.

pub mod error;
pub mod eval;
pub mod fusion;
pub mod geomodel;
pub mod graph;
pub mod io;
pub mod loopclosure;
pub mod model;
pub mod positioning;
mod rng;
pub mod similarity;
pub mod simulator;

pub use error::{Error, Result};
pub use model::{euclidean_distance, wrap_angle, Pose2D, RfObservation, Step, Trajectory};
