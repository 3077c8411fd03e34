//! Postural optimization.
//!
//! Risk is minimized (lower RULA/DULA is better). The online problem keeps
//! the hand within a tolerance of the current interaction pose; the rollout
//! problems choose a start posture whose induced motion along a recorded
//! hand trajectory accumulates the least risk.

mod cem;
mod rollout;

pub use cem::{solve_initial, solve_online_cem, solve_reconfig, CemConfig};
pub use rollout::{rollout_posture, RolloutProblem};

use std::time::Duration;

use nalgebra::{Matrix6, SMatrix};
use serde::{Deserialize, Serialize};

use crate::dula::MlpModel;
use crate::error::{Error, Result};
use crate::estimator::Observation;
use crate::kinematics::{
    clamp_to_limits, forward_kinematics, jacobian, pose_error, JointLimits, JointPosture, JointState, JointVector,
    SegmentLengths, NUM_JOINTS,
};
use crate::rula::{grand_score, TaskContext};

/// Something to minimize over postures.
pub trait Objective: Sync {
    fn value(&self, q: &JointPosture) -> f64;

    /// Gradient with respect to the joint angles, if the objective has one.
    fn gradient(&self, _q: &JointPosture) -> Option<JointVector> {
        None
    }
}

/// Ergonomic risk of a posture.
#[derive(Debug, Clone, PartialEq)]
pub enum ErgonomicsObjective {
    /// Learned surrogate; output used directly.
    Dula { model: MlpModel, ctx: TaskContext },
    /// Worksheet grand score as a float; not differentiable.
    RulaRaw { ctx: TaskContext },
}

impl Objective for ErgonomicsObjective {
    fn value(&self, q: &JointPosture) -> f64 {
        match self {
            Self::Dula { model, ctx } => model.score(q, ctx),
            Self::RulaRaw { ctx } => grand_score(q, ctx) as f64,
        }
    }

    fn gradient(&self, q: &JointPosture) -> Option<JointVector> {
        match self {
            Self::Dula { model, ctx } => Some(JointVector::from(model.score_and_joint_gradient(q, ctx).1)),
            Self::RulaRaw { .. } => None,
        }
    }
}

/// Weighted squared distance to a fixed posture.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub target: JointPosture,
}

impl Objective for Quadratic {
    fn value(&self, q: &JointPosture) -> f64 {
        (q.0 - self.target.0).norm_squared()
    }

    fn gradient(&self, q: &JointPosture) -> Option<JointVector> {
        Some((q.0 - self.target.0) * 2.0)
    }
}

/// Allowed hand pose deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskTolerance {
    /// Meters.
    pub position: f64,
    /// Radians.
    pub orientation: f64,
}

impl Default for TaskTolerance {
    fn default() -> Self {
        Self { position: 0.005, orientation: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineProblem {
    pub q_current: JointState,
    pub z_current: Observation,
    pub epsilon: TaskTolerance,
    pub psi: SegmentLengths,
    pub limits: JointLimits,
}

impl OnlineProblem {
    pub fn new(q_current: JointState, z_current: Observation, psi: SegmentLengths, limits: JointLimits) -> Self {
        Self { q_current, z_current, epsilon: TaskTolerance::default(), psi, limits }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.position > 0.0 && self.epsilon.orientation > 0.0) {
            return Err(Error::InvalidArgument(format!("task tolerance must be positive: {:?}", self.epsilon)));
        }
        self.psi.validate()
    }

    /// Largest of position and orientation error, each relative to its
    /// tolerance. The constraint holds iff this is at most 1.
    pub fn violation(&self, q: &JointPosture) -> f64 {
        let e = pose_error(&forward_kinematics(q, &self.psi), &self.z_current.pose);
        let p = e.fixed_rows::<3>(0).norm() / self.epsilon.position;
        let r = e.fixed_rows::<3>(3).norm() / self.epsilon.orientation;
        p.max(r)
    }

    pub fn is_feasible(&self, q: &JointPosture) -> bool {
        self.violation(q) <= 1.0
    }

    fn weights(&self) -> [f64; 6] {
        let (p, r) = (1.0 / self.epsilon.position, 1.0 / self.epsilon.orientation);
        [p, p, p, r, r, r]
    }

    /// Minimum-norm Gauss-Newton steps toward the target pose, clamped to
    /// the limits after each step. Stops once well inside the tolerance.
    pub fn project(&self, q: &JointPosture, iters: usize) -> JointPosture {
        let w = self.weights();
        let mut q = clamp_to_limits(q, &self.limits);
        for _ in 0..iters {
            let e = pose_error(&forward_kinematics(&q, &self.psi), &self.z_current.pose);
            let r = nalgebra::Vector6::from_fn(|k, _| e[k] * w[k]);
            if r.fixed_rows::<3>(0).norm() < 0.1 && r.fixed_rows::<3>(3).norm() < 0.1 {
                break;
            }
            let j = jacobian(&q, &self.psi);
            let jw = SMatrix::<f64, 6, NUM_JOINTS>::from_fn(|a, b| j[(a, b)] * w[a]);
            let a: Matrix6<f64> = jw * jw.transpose() + Matrix6::identity() * 1e-6;
            let Some(y) = a.cholesky().map(|c| c.solve(&r)) else {
                break;
            };
            q = clamp_to_limits(&JointPosture(q.0 - jw.transpose() * y), &self.limits);
        }
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
    Infeasible,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::MaxIters => "max_iters",
            Self::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub q: JointPosture,
    pub value: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub evaluations: usize,
    /// Constraint violation of `q` (0 for unconstrained problems).
    pub violation: f64,
    /// Objective of the accepted iterate (gradient) or elite mean (CEM) per iteration.
    pub trace: Vec<f64>,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradientConfig {
    /// Stop when the projected descent direction is below this (max norm).
    pub tol: f64,
    pub max_iters: usize,
    /// Largest joint change tried per step, radians.
    pub max_step: f64,
    pub restore_iters: usize,
}

impl Default for GradientConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_iters: 200, max_step: 0.1, restore_iters: 20 }
    }
}

/// Feasible-point projected gradient: descend along the objective gradient
/// projected onto the null space of the task Jacobian (free joints only),
/// pull back onto the task manifold, and accept only feasible decreases.
pub fn solve_online_gradient(p: &OnlineProblem, obj: &dyn Objective, cfg: &GradientConfig) -> Result<Solution> {
    let started = std::time::Instant::now();
    p.validate()?;
    let mut q = clamp_to_limits(&p.q_current.q, &p.limits);
    if !p.is_feasible(&q) {
        q = p.project(&q, cfg.restore_iters);
        if !p.is_feasible(&q) {
            return Err(Error::Infeasible { violation: p.violation(&q) });
        }
    }
    let w = p.weights();
    let mut f = obj.value(&q);
    let mut evaluations = 1;
    let mut trace = vec![f];
    let mut status = SolveStatus::MaxIters;
    let mut iterations = 0;
    for it in 0..cfg.max_iters {
        iterations = it + 1;
        let g = obj
            .gradient(&q)
            .ok_or_else(|| Error::InvalidArgument("gradient solver needs a differentiable objective".into()))?;
        let free: [bool; NUM_JOINTS] = std::array::from_fn(|j| {
            let at_min = q[j] <= p.limits.q_min[j] && g[j] > 0.0;
            let at_max = q[j] >= p.limits.q_max[j] && g[j] < 0.0;
            !(at_min || at_max)
        });
        let j = jacobian(&q, &p.psi);
        let jw = SMatrix::<f64, 6, NUM_JOINTS>::from_fn(|a, b| if free[b] { j[(a, b)] * w[a] } else { 0.0 });
        let gf = JointVector::from_fn(|k, _| if free[k] { g[k] } else { 0.0 });
        let a: Matrix6<f64> = jw * jw.transpose() + Matrix6::identity() * 1e-9;
        let d = match a.cholesky() {
            Some(c) => -(gf - jw.transpose() * c.solve(&(jw * gf))),
            None => -gf,
        };
        let dmax = d.amax();
        if dmax < cfg.tol {
            status = SolveStatus::Converged;
            break;
        }
        let mut step = cfg.max_step / dmax;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = p.project(&JointPosture(q.0 + d * step), cfg.restore_iters);
            if p.is_feasible(&trial) {
                let ft = obj.value(&trial);
                evaluations += 1;
                if ft < f - 1e-4 * step * d.norm_squared() {
                    q = trial;
                    f = ft;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
            if step * dmax < 1e-7 {
                break;
            }
        }
        if !accepted {
            // No decrease at any step length: stationary at this resolution.
            status = SolveStatus::Converged;
            break;
        }
        trace.push(f);
    }
    Ok(Solution {
        q,
        value: f,
        status,
        iterations,
        evaluations,
        violation: p.violation(&q),
        trace,
        elapsed: started.elapsed(),
    })
}
