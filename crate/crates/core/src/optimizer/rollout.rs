//! Posture trajectories induced by a recorded hand motion.

use nalgebra::Matrix6;

use crate::error::{Error, Result};
use crate::estimator::PostureTrajectory;
use crate::kinematics::{
    clamp_to_limits, jacobian, motion_update, JointLimits, JointPosture, JointState, JointVector, SegmentLengths, Twist,
};

/// A recorded interaction-point velocity sequence to be replayed from a
/// chosen start posture.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutProblem {
    /// `twists[t]` drives the step from `q_t` to `q_{t+1}`.
    pub twists: Vec<Twist>,
    pub dt: f64,
    pub psi: SegmentLengths,
    pub limits: JointLimits,
    /// First twist used; 0 for the whole recording, `t_p + 1` after a pause.
    pub start_index: usize,
    /// Damping of the pseudoinverse.
    pub damping: f64,
    /// Joint-rate norm above which the rollout is declared divergent, rad/s.
    pub speed_cap: f64,
}

impl RolloutProblem {
    pub fn new(twists: Vec<Twist>, dt: f64, psi: SegmentLengths, limits: JointLimits) -> Self {
        Self { twists, dt, psi, limits, start_index: 0, damping: 1e-3, speed_cap: 20.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {}", self.dt)));
        }
        if self.start_index > self.twists.len() {
            return Err(Error::InvalidArgument(format!(
                "start index {} beyond the {} recorded twists",
                self.start_index,
                self.twists.len()
            )));
        }
        if !(self.damping > 0.0 && self.speed_cap > 0.0) {
            return Err(Error::InvalidArgument("damping and speed cap must be positive".into()));
        }
        Ok(())
    }
}

/// Damped least-squares joint rates for a task twist.
pub fn damped_rates(q: &JointPosture, twist: &Twist, psi: &SegmentLengths, damping: f64) -> JointVector {
    let j = jacobian(q, psi);
    let a: Matrix6<f64> = j * j.transpose() + Matrix6::identity() * damping * damping;
    let y = a.cholesky().expect("damped matrix is positive definite").solve(&twist.to_vector());
    j.transpose() * y
}

/// Integrates `q̇ = J⁺(q) ẋ` from `q0` over the twists after `start_index`,
/// clamping to the limits. The result has one more state than twists used.
pub fn rollout_posture(q0: &JointPosture, rp: &RolloutProblem) -> Result<PostureTrajectory> {
    rp.validate()?;
    let twists = &rp.twists[rp.start_index..];
    let mut times = Vec::with_capacity(twists.len() + 1);
    let mut states = Vec::with_capacity(twists.len() + 1);
    let mut q = clamp_to_limits(q0, &rp.limits);
    for (k, tw) in twists.iter().enumerate() {
        let qdot = damped_rates(&q, tw, &rp.psi, rp.damping);
        let speed = qdot.norm();
        if !(speed <= rp.speed_cap) {
            return Err(Error::RolloutDiverged { step: rp.start_index + k, speed });
        }
        times.push((rp.start_index + k) as f64 * rp.dt);
        states.push(JointState { q, qdot });
        let next = motion_update(&JointState { q, qdot }, &JointVector::zeros(), rp.dt)?;
        q = clamp_to_limits(&next.q, &rp.limits);
    }
    times.push((rp.start_index + twists.len()) as f64 * rp.dt);
    states.push(JointState::at_rest(q));
    Ok(PostureTrajectory { times, states })
}
