//! Teleoperation simulation.
//!
//! A simulated operator holds the leader device; the follower copies the
//! leader's motion scaled by `k` while the clutch is engaged. Each step the
//! operator picks joint rates that trade off driving the follower to its goal
//! against moving toward the currently suggested posture `q*`, weighted by
//! the acceptance `α`. A shadow operator with no suggestions runs the same
//! task in lockstep so every log carries both traces.

mod episode;
mod task;

pub use episode::{read_episode_csv, write_episode_csv, EpisodeLog, EpisodeRecord, EpisodeSummary, TraceSummary};
pub use task::{Pause, TaskTarget, TeleopTask, DEMO_TASK_TOML};

use std::time::Instant;

use nalgebra::{SMatrix, UnitQuaternion, Vector3, Vector6};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dula::MlpModel;
use crate::error::{Error, Result};
use crate::estimator::{Observation, PostureTrajectory};
use crate::kinematics::{
    forward_kinematics, jacobian, orientation_error, JointLimits, JointPosture, JointState, JointVector, Pose,
    SegmentLengths, Twist, NUM_JOINTS,
};
use crate::optimizer::{
    solve_online_cem, solve_online_gradient, CemConfig, ErgonomicsObjective, GradientConfig, OnlineProblem,
    TaskTolerance,
};
use crate::rng;
use crate::rula::{grand_score, TaskContext};

/// Operator model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HumanBehavior {
    /// Proportional gain from follower goal error to leader velocity, 1/s.
    pub gain: f64,
    pub max_linear_speed: f64,
    pub max_angular_speed: f64,
    /// Weight of angular against linear tracking error.
    pub rotation_weight: f64,
    /// Weight of the correction term before scaling by `α`.
    pub correction_weight: f64,
    /// Time over which the operator aims to close the gap to `q*`, seconds.
    pub correction_time: f64,
    /// Per-joint effort penalty on joint rates.
    pub effort: [f64; NUM_JOINTS],
}

impl Default for HumanBehavior {
    fn default() -> Self {
        Self {
            gain: 1.5,
            max_linear_speed: 0.15,
            max_angular_speed: 0.5,
            rotation_weight: 0.05,
            correction_weight: 0.02,
            correction_time: 0.5,
            effort: [0.02, 0.02, 0.02, 0.002, 0.002, 0.002, 0.001, 0.002, 0.002, 0.002],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub alpha: f64,
    /// Leader-to-follower translation scale `k`.
    pub motion_scale: f64,
    /// Follower position tolerance at the goal, meters.
    pub goal_tolerance: f64,
    /// Follower orientation tolerance at the goal, radians.
    pub goal_orientation_tolerance: f64,
    /// Planning horizon in steps. The shipped operator re-plans greedily
    /// every step, so this is carried for multi-step planners.
    pub horizon: usize,
    /// Per-joint rate cap, rad/s.
    pub human_speed_cap: f64,
    pub seed: u64,
    /// Steps between optimizer calls.
    pub correction_period: usize,
    pub max_steps: usize,
    pub tolerance: TaskTolerance,
    pub behavior: HumanBehavior,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            alpha: 0.0,
            motion_scale: 1.0,
            goal_tolerance: 0.01,
            goal_orientation_tolerance: 0.05,
            horizon: 10,
            human_speed_cap: 1.0,
            seed: 0,
            correction_period: 10,
            max_steps: 600,
            tolerance: TaskTolerance::default(),
            behavior: HumanBehavior::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.motion_scale > 0.0 && self.goal_tolerance > 0.0 && self.human_speed_cap > 0.0) {
            return Err(Error::InvalidArgument("motion scale, goal tolerance and speed cap must be positive".into()));
        }
        if self.correction_period == 0 || self.max_steps == 0 {
            return Err(Error::InvalidArgument("correction period and step cap must be positive".into()));
        }
        Ok(())
    }
}

/// Rigid displacement: translation plus base-frame rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseDelta {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl PoseDelta {
    pub fn identity() -> Self {
        Self { translation: Vector3::zeros(), rotation: UnitQuaternion::identity() }
    }

    /// Displacement taking `from` to `to`.
    pub fn between(from: &Pose, to: &Pose) -> Self {
        Self { translation: to.position - from.position, rotation: to.orientation * from.orientation.inverse() }
    }

    pub fn apply(&self, pose: &Pose) -> Pose {
        Pose::new(pose.position + self.translation, self.rotation * pose.orientation)
    }
}

/// Follower displacement for a leader displacement: translation scaled by
/// `k`, rotation copied, nothing while the clutch is open.
pub fn couple_leader_follower(leader_delta: &PoseDelta, k: f64, clutch_engaged: bool) -> PoseDelta {
    if clutch_engaged {
        PoseDelta { translation: leader_delta.translation * k, rotation: leader_delta.rotation }
    } else {
        PoseDelta::identity()
    }
}

/// Leader twist the operator aims for to bring the follower to `goal`.
pub fn desired_leader_twist(follower: &Pose, goal: &Pose, k: f64, b: &HumanBehavior) -> Twist {
    let cap = |v: Vector3<f64>, max: f64| if v.norm() > max { v * (max / v.norm()) } else { v };
    let linear = cap((goal.position - follower.position) * (b.gain / k), b.max_linear_speed);
    let angular = cap(orientation_error(&goal.orientation, &follower.orientation) * b.gain, b.max_angular_speed);
    Twist { linear, angular }
}

/// Joint rates minimizing
/// `‖J q̇ − v‖²_W + ακ‖q̇ − (q* − q)/T‖² + q̇ᵀ E q̇`, then capped per joint.
/// `task_weight = 0` drops the tracking term (clutch open).
pub fn human_command(
    q: &JointPosture,
    v_des: &Twist,
    q_star: Option<&JointPosture>,
    alpha: f64,
    task_weight: f64,
    psi: &SegmentLengths,
    cfg: &SimConfig,
) -> JointVector {
    let b = &cfg.behavior;
    let j = jacobian(q, psi);
    let w = Vector6::new(1.0, 1.0, 1.0, b.rotation_weight, b.rotation_weight, b.rotation_weight) * task_weight;
    let jw = SMatrix::<f64, 6, NUM_JOINTS>::from_fn(|r, c| j[(r, c)] * w[r]);
    let mut a = j.transpose() * jw;
    let mut rhs = jw.transpose() * v_des.to_vector();
    for k in 0..NUM_JOINTS {
        a[(k, k)] += b.effort[k];
    }
    if let Some(target) = q_star {
        let c = alpha * b.correction_weight;
        if c > 0.0 {
            for k in 0..NUM_JOINTS {
                a[(k, k)] += c;
            }
            rhs += (target.0 - q.0) * (c / b.correction_time);
        }
    }
    let qdot = a.cholesky().map(|ch| ch.solve(&rhs)).unwrap_or_else(JointVector::zeros);
    let peak = qdot.amax();
    if peak > cfg.human_speed_cap {
        qdot * (cfg.human_speed_cap / peak)
    } else {
        qdot
    }
}

/// Applies joint rates for one step; joints that hit a limit stop there.
pub fn advance(q: &JointPosture, qdot: &JointVector, dt: f64, lim: &JointLimits) -> JointState {
    let mut next = JointState { q: JointPosture(q.0 + qdot * dt), qdot: *qdot };
    for k in 0..NUM_JOINTS {
        if next.q[k] < lim.q_min[k] || next.q[k] > lim.q_max[k] {
            next.q[k] = next.q[k].clamp(lim.q_min[k], lim.q_max[k]);
            next.qdot[k] = 0.0;
        }
    }
    next
}

/// One operator step toward the follower goal with the suggestion `q_star`.
pub fn step_human(
    state: &JointState,
    follower: &Pose,
    goal: &Pose,
    q_star: Option<&JointPosture>,
    cfg: &SimConfig,
    psi: &SegmentLengths,
    lim: &JointLimits,
) -> JointState {
    let v = desired_leader_twist(follower, goal, cfg.motion_scale, &cfg.behavior);
    let qdot = human_command(&state.q, &v, q_star, cfg.alpha, 1.0, psi, cfg);
    advance(&state.q, &qdot, cfg.dt, lim)
}

/// Source of suggested postures.
#[derive(Debug, Clone)]
pub enum CorrectionSource {
    None,
    Cem { objective: ErgonomicsObjective, cfg: CemConfig },
    Gradient { objective: ErgonomicsObjective, cfg: GradientConfig },
}

impl CorrectionSource {
    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Cem { .. } => "cem",
            Self::Gradient { .. } => "gradient",
        }
    }

    /// Gradient correction on the learned score.
    pub fn gradient(model: MlpModel, ctx: TaskContext) -> Self {
        Self::Gradient { objective: ErgonomicsObjective::Dula { model, ctx }, cfg: GradientConfig::default() }
    }

    /// Sample-based correction on the worksheet score.
    pub fn cem(ctx: TaskContext, cfg: CemConfig) -> Self {
        Self::Cem { objective: ErgonomicsObjective::RulaRaw { ctx }, cfg }
    }
}

/// Operator, follower and goal progress of one simulated run.
#[derive(Debug, Clone)]
struct Operator {
    state: JointState,
    follower: Pose,
    waypoint: usize,
    done_at: Option<usize>,
}

impl Operator {
    fn new(task: &TeleopTask) -> Self {
        Self { state: JointState::at_rest(task.start_posture), follower: task.follower_start, waypoint: 0, done_at: None }
    }

    fn goal<'a>(&self, task: &'a TeleopTask) -> &'a Pose {
        &task.target.poses()[self.waypoint]
    }

    /// Advances the waypoint if reached; true once the final one is reached.
    fn check_goal(&mut self, task: &TeleopTask, cfg: &SimConfig) -> bool {
        loop {
            let goal = self.goal(task);
            let reached = (goal.position - self.follower.position).norm() <= cfg.goal_tolerance
                && orientation_error(&goal.orientation, &self.follower.orientation).norm() <= cfg.goal_orientation_tolerance;
            if !reached {
                return false;
            }
            if self.waypoint + 1 == task.target.poses().len() {
                return true;
            }
            self.waypoint += 1;
        }
    }

    fn command(&self, task: &TeleopTask, q_star: Option<&JointPosture>, alpha: f64, engaged: bool, psi: &SegmentLengths, cfg: &SimConfig) -> JointVector {
        if engaged {
            let v = desired_leader_twist(&self.follower, self.goal(task), cfg.motion_scale, &cfg.behavior);
            human_command(&self.state.q, &v, q_star, alpha, 1.0, psi, cfg)
        } else {
            // Clutch open: the operator is free to reposition toward q*.
            human_command(&self.state.q, &Twist::zero(), q_star, if q_star.is_some() { 1.0 } else { 0.0 }, 0.0, psi, cfg)
        }
    }

    fn advance(&mut self, qdot: &JointVector, engaged: bool, psi: &SegmentLengths, lim: &JointLimits, cfg: &SimConfig) {
        let before = forward_kinematics(&self.state.q, psi);
        self.state = advance(&self.state.q, qdot, cfg.dt, lim);
        let after = forward_kinematics(&self.state.q, psi);
        let delta = couple_leader_follower(&PoseDelta::between(&before, &after), cfg.motion_scale, engaged);
        self.follower = delta.apply(&self.follower);
    }
}

/// Runs one episode until the follower reaches its final goal or the step cap.
pub fn run_episode(
    task: &TeleopTask,
    cfg: &SimConfig,
    correction: &CorrectionSource,
    psi: &SegmentLengths,
    lim: &JointLimits,
) -> Result<EpisodeLog> {
    cfg.validate()?;
    task.validate()?;
    let mut actual = Operator::new(task);
    let mut shadow = Operator::new(task);
    let mut q_star: Option<JointPosture> = None;
    let mut records = Vec::new();
    let mut solve_times = Vec::new();
    for k in 0..=cfg.max_steps {
        let t = k as f64 * cfg.dt;
        if shadow.done_at.is_none() && shadow.check_goal(task, cfg) {
            shadow.done_at = Some(k);
        }
        let finished = actual.check_goal(task, cfg);
        if finished {
            actual.done_at = Some(k);
        }
        let engaged = task.clutch_engaged(k);
        let leader = forward_kinematics(&actual.state.q, psi);

        let mut solve_time = None;
        if !finished && k < cfg.max_steps && k % cfg.correction_period == 0 && !matches!(correction, CorrectionSource::None) {
            let z = Observation { time: t, pose: leader, twist: Twist::zero() };
            let mut problem = OnlineProblem::new(actual.state, z, psi.clone(), lim.clone());
            problem.epsilon = cfg.tolerance;
            let started = Instant::now();
            let result = match correction {
                CorrectionSource::Cem { objective, cfg: c } => {
                    let c = CemConfig { seed: c.seed ^ cfg.seed ^ (k as u64).wrapping_mul(0x9E37_79B9), ..*c };
                    solve_online_cem(&problem, objective, &c)
                }
                CorrectionSource::Gradient { objective, cfg: c } => solve_online_gradient(&problem, objective, c),
                CorrectionSource::None => unreachable!(),
            };
            let elapsed = started.elapsed().as_secs_f64();
            solve_times.push(elapsed);
            solve_time = Some(elapsed);
            match result {
                Ok(sol) => q_star = Some(sol.q),
                Err(e) => log::warn!("correction at step {k} failed: {e}"),
            }
        }

        let stop = finished || k == cfg.max_steps;
        let qdot = if stop { JointVector::zeros() } else { actual.command(task, q_star.as_ref(), cfg.alpha, engaged, psi, cfg) };
        let shadow_qdot = if stop { JointVector::zeros() } else { shadow.command(task, None, 0.0, engaged, psi, cfg) };
        let suggested = q_star.unwrap_or(actual.state.q);
        records.push(EpisodeRecord {
            t,
            state: JointState { q: actual.state.q, qdot },
            leader,
            leader_twist: Twist::from_vector(&(jacobian(&actual.state.q, psi) * qdot)),
            follower: actual.follower,
            q_star: suggested,
            shadow: shadow.state.q,
            rula_uncorrected: grand_score(&shadow.state.q, &task.ctx),
            rula_corrected: grand_score(&actual.state.q, &task.ctx),
            rula_optimal: grand_score(&suggested, &task.ctx),
            clutch_engaged: engaged,
            solve_time,
        });
        if stop {
            break;
        }
        actual.advance(&qdot, engaged, psi, lim, cfg);
        shadow.advance(&shadow_qdot, engaged, psi, lim, cfg);
    }
    Ok(EpisodeLog {
        task: task.name.clone(),
        correction: correction.name().to_string(),
        alpha: cfg.alpha,
        dt: cfg.dt,
        completion_step: actual.done_at,
        uncorrected_completion_step: shadow.done_at,
        solve_times,
        records,
    })
}

/// Noise injected into generated observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservationNoise {
    /// Meters.
    pub position: f64,
    /// Radians, as a rotation vector.
    pub orientation: f64,
    /// m/s.
    pub linear_velocity: f64,
    /// rad/s.
    pub angular_velocity: f64,
}

impl Default for ObservationNoise {
    fn default() -> Self {
        Self { position: 0.002, orientation: 0.005, linear_velocity: 0.005, angular_velocity: 0.01 }
    }
}

impl ObservationNoise {
    pub fn none() -> Self {
        Self { position: 0.0, orientation: 0.0, linear_velocity: 0.0, angular_velocity: 0.0 }
    }
}

/// Observation stream of a logged episode with seeded noise.
pub fn observe_episode(log: &EpisodeLog, noise: &ObservationNoise, seed: u64) -> Vec<Observation> {
    log.records
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let mut g = rng::stream(seed, 0x0B5E, k as u64);
            let mut n3 = |s: f64| Vector3::from_fn(|_, _| s * g.sample::<f64, _>(StandardNormal));
            let dp = n3(noise.position);
            let dr = n3(noise.orientation);
            let dv = n3(noise.linear_velocity);
            let dw = n3(noise.angular_velocity);
            Observation {
                time: r.t,
                pose: Pose::new(r.leader.position + dp, UnitQuaternion::from_scaled_axis(dr) * r.leader.orientation),
                twist: Twist { linear: r.leader_twist.linear + dv, angular: r.leader_twist.angular + dw },
            }
        })
        .collect()
}

/// Uncorrected episode plus its noisy observation stream and true posture
/// trajectory, for estimator evaluation.
pub fn generate_ground_truth(
    task: &TeleopTask,
    cfg: &SimConfig,
    noise: &ObservationNoise,
    psi: &SegmentLengths,
    lim: &JointLimits,
) -> Result<(EpisodeLog, Vec<Observation>, PostureTrajectory)> {
    let log = run_episode(task, cfg, &CorrectionSource::None, psi, lim)?;
    let obs = observe_episode(&log, noise, cfg.seed);
    let truth = log.trajectory();
    Ok((log, obs, truth))
}
