//! Ergonomics-aware physical human-robot interaction.
//!
//! Estimate a seated operator's upper-body posture from the interacting
//! robot's end-effector trajectory, score it with RULA, learn a
//! differentiable surrogate of that score, and use it to suggest
//! lower-risk postures inside a teleoperation simulation.

pub mod error;
pub mod kinematics;
pub mod dula;
pub mod estimator;
pub mod optimizer;
pub mod simulator;
pub mod rula;
pub mod rng;

pub use error::{Error, Result};
