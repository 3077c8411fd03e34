//! Posture estimation from interaction-point observations.
//!
//! The only measurement is the pose and twist of the hand frame. The main
//! estimator is a particle filter over joint angles and rates; two
//! deterministic inverse-kinematics baselines ([`online_ik`] and
//! [`offline_traj_ik`]) solve the same residual by least squares.

mod ik;
mod io;

pub use ik::{offline_traj_ik, online_ik, trajectory_objective, IkConfig, IkRun};
pub use io::{read_estimate_csv, read_observations_csv, write_estimate_csv, write_observations_csv};

use nalgebra::{Matrix6, SMatrix, Vector6};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    forward_kinematics, jacobian, motion_update, neutral_posture, pose_error, JointLimits, JointPosture,
    JointState, JointVector, Pose, SegmentLengths, Twist, NUM_JOINTS,
};
use crate::rng;

/// Interaction-point measurement at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub time: f64,
    pub pose: Pose,
    pub twist: Twist,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub state: JointState,
    pub log_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub num_particles: usize,
    /// Per-joint std of the initial truncated normal, radians.
    pub init_std: [f64; NUM_JOINTS],
    /// Per-joint std of the random acceleration driving the motion model.
    pub process_accel_std: [f64; NUM_JOINTS],
    /// Position (m) then orientation (rad) likelihood std.
    pub obs_std: [f64; 6],
    /// Linear (m/s) then angular (rad/s) velocity likelihood std.
    pub vel_obs_std: [f64; 6],
    pub ess_resample_fraction: f64,
    pub seed: u64,
    /// Pull each predicted particle toward the observation before weighting.
    pub guided: bool,
    /// Fraction of the linearized correction applied by the guided step.
    pub guide_gain: f64,
    /// Relative ease of motion per joint used by the guided step.
    pub mobility: [f64; NUM_JOINTS],
    /// Rate (1/s) at which joint rates that leave the hand still relax toward
    /// zero. Nothing observed ever corrects them, so without it they persist
    /// and integrate into drift.
    pub velocity_decay: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            num_particles: 500,
            init_std: [0.15; NUM_JOINTS],
            process_accel_std: [0.05, 0.05, 0.05, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3],
            obs_std: [0.01, 0.01, 0.01, 0.04, 0.04, 0.04],
            vel_obs_std: [0.05, 0.05, 0.05, 0.2, 0.2, 0.2],
            ess_resample_fraction: 0.5,
            seed: 0,
            guided: true,
            guide_gain: 1.0,
            mobility: [0.05, 0.05, 0.05, 0.5, 0.5, 0.5, 1.0, 0.5, 0.5, 0.5],
            velocity_decay: 2.0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_particles == 0 {
            return Err(Error::InvalidArgument("num_particles must be positive".into()));
        }
        if !(self.guide_gain > 0.0 && self.guide_gain <= 1.0) {
            return Err(Error::InvalidArgument(format!("guide_gain must lie in (0, 1], got {}", self.guide_gain)));
        }
        if !(self.velocity_decay >= 0.0 && self.velocity_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!("velocity_decay must be non-negative, got {}", self.velocity_decay)));
        }
        if self.mobility.iter().any(|m| !(*m > 0.0)) {
            return Err(Error::InvalidArgument("mobility weights must be positive".into()));
        }
        let stds = self.init_std.iter().chain(&self.process_accel_std).chain(&self.obs_std).chain(&self.vel_obs_std);
        if let Some(bad) = stds.copied().find(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!("standard deviations must be positive and finite, got {bad}")));
        }
        if !(self.ess_resample_fraction > 0.0 && self.ess_resample_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "ess_resample_fraction must lie in (0, 1], got {}",
                self.ess_resample_fraction
            )));
        }
        Ok(())
    }
}

/// Timestamped joint trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PostureTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<JointState>,
}

impl PostureTrajectory {
    pub fn new(times: Vec<f64>, states: Vec<JointState>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::DimensionMismatch { expected: times.len(), got: states.len() });
        }
        check_monotone(&times)?;
        Ok(Self { times, states })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn push(&mut self, time: f64, state: JointState) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if !(time > last) {
                return Err(Error::InvalidArgument(format!("time {time} does not follow {last}")));
            }
        }
        self.times.push(time);
        self.states.push(state);
        Ok(())
    }
}

pub(crate) fn check_monotone(times: &[f64]) -> Result<()> {
    for w in times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidArgument(format!("timestamps must increase: {} then {}", w[0], w[1])));
        }
    }
    Ok(())
}

fn gauss(rng: &mut rng::Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Truncated normal by rejection; falls back to clamping if the mass inside
/// the interval is vanishingly small.
fn truncated_normal(rng: &mut rng::Rng, mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
    for _ in 0..1000 {
        let v = mean + std * gauss(rng);
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
    mean.clamp(lo, hi)
}

const INIT_STREAM: u64 = 0x1417;
const PREDICT_STREAM: u64 = 0x9DE1;
const RESAMPLE_STREAM: u64 = 0x5A3F;
const REINIT_STREAM: u64 = 0x4E11;

fn particles_around(mean: &JointPosture, cfg: &EstimatorConfig, lim: &JointLimits, stream: u64) -> Vec<Particle> {
    let m = cfg.num_particles;
    let log_w = -(m as f64).ln();
    (0..m)
        .map(|i| {
            let mut r = rng::stream(cfg.seed, stream, i as u64);
            let q = JointVector::from_fn(|j, _| truncated_normal(&mut r, mean[j], cfg.init_std[j], lim.q_min[j], lim.q_max[j]));
            Particle { state: JointState::at_rest(JointPosture(q)), log_weight: log_w }
        })
        .collect()
}

/// Initial particle cloud: truncated normal around the neutral posture, at rest.
pub fn init_particles(cfg: &EstimatorConfig, lim: &JointLimits) -> Vec<Particle> {
    particles_around(&neutral_posture(), cfg, lim, INIT_STREAM)
}

/// Propagates every particle through the motion model with random
/// acceleration. `step` keys the random streams.
pub fn predict(
    particles: &mut [Particle],
    dt: f64,
    psi: &SegmentLengths,
    cfg: &EstimatorConfig,
    lim: &JointLimits,
    step: u64,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let fade = 1.0 - (-cfg.velocity_decay * dt).exp();
    let m = JointVector::from(cfg.mobility);
    for (i, p) in particles.iter_mut().enumerate() {
        let mut r = rng::stream(cfg.seed, PREDICT_STREAM ^ step.wrapping_mul(0x1_0000_0001), i as u64);
        let qddot = JointVector::from_fn(|j, _| cfg.process_accel_std[j] * gauss(&mut r));
        let mut state = p.state;
        if fade > 0.0 {
            state.qdot -= null_space_part(&state.q, &state.qdot, &m, psi) * fade;
        }
        let mut next = motion_update(&state, &qddot, dt)?;
        for j in 0..NUM_JOINTS {
            if next.q[j] < lim.q_min[j] || next.q[j] > lim.q_max[j] {
                next.q[j] = next.q[j].clamp(lim.q_min[j], lim.q_max[j]);
                next.qdot[j] = 0.0;
            }
        }
        p.state = next;
    }
    Ok(())
}

/// Component of `qdot` that leaves the hand still, split off along the
/// mobility metric: `qdot - M Jᵀ (J M Jᵀ)⁻¹ J qdot`.
fn null_space_part(q: &JointPosture, qdot: &JointVector, m: &JointVector, psi: &SegmentLengths) -> JointVector {
    let j = jacobian(q, psi);
    let jm = SMatrix::<f64, 6, NUM_JOINTS>::from_fn(|r, c| j[(r, c)] * m[c]);
    let s: Matrix6<f64> = jm * j.transpose() + Matrix6::identity() * 1e-9;
    match s.cholesky() {
        Some(c) => qdot - jm.transpose() * c.solve(&(j * qdot)),
        None => JointVector::zeros(),
    }
}

/// Moves every particle part of the way toward the observation along a
/// mobility-weighted least-squares correction of pose and rates.
pub fn guide(particles: &mut [Particle], obs: &Observation, psi: &SegmentLengths, lim: &JointLimits, cfg: &EstimatorConfig) {
    let m = JointVector::from(cfg.mobility);
    let target = obs.twist.to_vector();
    for p in particles.iter_mut() {
        let q = p.state.q;
        let j = jacobian(&q, psi);
        let jm = SMatrix::<f64, 6, NUM_JOINTS>::from_fn(|r, c| j[(r, c)] * m[c]);
        let gain_for = |std: &[f64; 6]| -> Option<Matrix6<f64>> {
            let s: Matrix6<f64> = jm * j.transpose() + Matrix6::from_diagonal(&Vector6::from_fn(|k, _| std[k] * std[k]));
            s.try_inverse()
        };
        if let Some(inv) = gain_for(&cfg.obs_std) {
            let e = pose_error(&obs.pose, &forward_kinematics(&q, psi));
            p.state.q.0 += jm.transpose() * (inv * e) * cfg.guide_gain;
        }
        if let Some(inv) = gain_for(&cfg.vel_obs_std) {
            let e = target - j * p.state.qdot;
            p.state.qdot += jm.transpose() * (inv * e) * cfg.guide_gain;
        }
        for k in 0..NUM_JOINTS {
            if p.state.q[k] < lim.q_min[k] || p.state.q[k] > lim.q_max[k] {
                p.state.q[k] = p.state.q[k].clamp(lim.q_min[k], lim.q_max[k]);
                p.state.qdot[k] = 0.0;
            }
        }
    }
}

/// Negative log-likelihood (up to a constant) of one state given an observation.
pub fn observation_cost(state: &JointState, obs: &Observation, psi: &SegmentLengths, cfg: &EstimatorConfig) -> f64 {
    let e = pose_error(&forward_kinematics(&state.q, psi), &obs.pose);
    let v: Vector6<f64> = jacobian(&state.q, psi) * state.qdot - obs.twist.to_vector();
    let mut c = 0.0;
    for k in 0..6 {
        c += (e[k] / cfg.obs_std[k]).powi(2) + (v[k] / cfg.vel_obs_std[k]).powi(2);
    }
    0.5 * c
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Outcome of a weight update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightUpdate {
    Normal,
    /// Every weight collapsed; the cloud was redrawn around the best particle.
    Reinitialized,
}

/// Multiplies in the observation likelihood and renormalizes. `step` keys the
/// streams used if the cloud has to be redrawn.
pub fn update_weights(
    particles: &mut Vec<Particle>,
    obs: &Observation,
    psi: &SegmentLengths,
    lim: &JointLimits,
    cfg: &EstimatorConfig,
    step: u64,
) -> WeightUpdate {
    for p in particles.iter_mut() {
        p.log_weight -= observation_cost(&p.state, obs, psi, cfg);
    }
    let total = log_sum_exp(particles.iter().map(|p| p.log_weight));
    if total.is_finite() {
        for p in particles.iter_mut() {
            p.log_weight -= total;
        }
        return WeightUpdate::Normal;
    }
    let best = particles
        .iter()
        .filter(|p| p.state.is_finite())
        .min_by(|a, b| observation_cost(&a.state, obs, psi, cfg).total_cmp(&observation_cost(&b.state, obs, psi, cfg)))
        .map(|p| p.state.q)
        .unwrap_or_else(neutral_posture);
    *particles = particles_around(&best, cfg, lim, REINIT_STREAM ^ step.wrapping_mul(0x1_0000_0001));
    WeightUpdate::Reinitialized
}

pub fn effective_sample_size(particles: &[Particle]) -> f64 {
    1.0 / particles.iter().map(|p| (2.0 * p.log_weight).exp()).sum::<f64>()
}

/// Systematic resampling, run only when the effective sample size drops
/// below the configured fraction. Returns whether it ran.
pub fn resample(particles: &mut Vec<Particle>, cfg: &EstimatorConfig, step: u64) -> bool {
    let m = particles.len();
    if m == 0 || effective_sample_size(particles) >= cfg.ess_resample_fraction * m as f64 {
        return false;
    }
    let mut r = rng::stream(cfg.seed, RESAMPLE_STREAM, step);
    let u0: f64 = r.random::<f64>() / m as f64;
    let log_w = -(m as f64).ln();
    let mut out = Vec::with_capacity(m);
    let mut cum = 0.0;
    let mut i = 0;
    for k in 0..m {
        let u = u0 + k as f64 / m as f64;
        while i < m - 1 && cum + particles[i].log_weight.exp() < u {
            cum += particles[i].log_weight.exp();
            i += 1;
        }
        out.push(Particle { state: particles[i].state, log_weight: log_w });
    }
    *particles = out;
    true
}

/// Weighted mean of angles and rates, clamped to the limits.
pub fn estimate(particles: &[Particle], lim: &JointLimits) -> JointState {
    let mut q = JointVector::zeros();
    let mut qdot = JointVector::zeros();
    let mut total = 0.0;
    for p in particles {
        let w = p.log_weight.exp();
        q += p.state.q.0 * w;
        qdot += p.state.qdot * w;
        total += w;
    }
    let q = q / total;
    let qdot = qdot / total;
    JointState { q: JointPosture(q.zip_zip_map(&lim.q_min, &lim.q_max, |v, lo, hi| v.clamp(lo, hi))), qdot }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterDiagnostics {
    pub resampled_steps: usize,
    /// Steps at which the cloud collapsed and was redrawn.
    pub reinitialized: Vec<usize>,
    pub min_ess: f64,
}

/// Stateful particle filter driver.
#[derive(Debug, Clone)]
pub struct ParticleFilter {
    cfg: EstimatorConfig,
    psi: SegmentLengths,
    lim: JointLimits,
    particles: Vec<Particle>,
    last_time: Option<f64>,
    step: u64,
    pub diagnostics: FilterDiagnostics,
}

impl ParticleFilter {
    pub fn new(cfg: EstimatorConfig, psi: SegmentLengths, lim: JointLimits) -> Result<Self> {
        cfg.validate()?;
        psi.validate()?;
        let particles = init_particles(&cfg, &lim);
        let min_ess = cfg.num_particles as f64;
        Ok(Self {
            cfg,
            psi,
            lim,
            particles,
            last_time: None,
            step: 0,
            diagnostics: FilterDiagnostics { min_ess, ..Default::default() },
        })
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    /// Assimilates one observation and returns the point estimate.
    pub fn step(&mut self, obs: &Observation) -> Result<JointState> {
        if let Some(t) = self.last_time {
            predict(&mut self.particles, obs.time - t, &self.psi, &self.cfg, &self.lim, self.step)?;
        }
        if self.cfg.guided {
            guide(&mut self.particles, obs, &self.psi, &self.lim, &self.cfg);
        }
        if update_weights(&mut self.particles, obs, &self.psi, &self.lim, &self.cfg, self.step) == WeightUpdate::Reinitialized {
            log::warn!("particle weights collapsed at t = {}; reinitialized", obs.time);
            self.diagnostics.reinitialized.push(self.step as usize);
        }
        self.diagnostics.min_ess = self.diagnostics.min_ess.min(effective_sample_size(&self.particles));
        let est = estimate(&self.particles, &self.lim);
        if resample(&mut self.particles, &self.cfg, self.step) {
            self.diagnostics.resampled_steps += 1;
        }
        self.last_time = Some(obs.time);
        self.step += 1;
        Ok(est)
    }
}

/// Runs the filter over a whole observation sequence.
pub fn run_filter(
    observations: &[Observation],
    cfg: &EstimatorConfig,
    psi: &SegmentLengths,
    lim: &JointLimits,
) -> Result<(PostureTrajectory, FilterDiagnostics)> {
    if observations.is_empty() {
        return Err(Error::InvalidArgument("at least one observation is required".into()));
    }
    check_monotone(&observations.iter().map(|o| o.time).collect::<Vec<_>>())?;
    let mut pf = ParticleFilter::new(cfg.clone(), psi.clone(), lim.clone())?;
    let mut traj = PostureTrajectory::default();
    for obs in observations {
        let est = pf.step(obs)?;
        traj.times.push(obs.time);
        traj.states.push(est);
    }
    Ok((traj, pf.diagnostics))
}

/// Median and quartiles of the absolute deviation of one joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationSummary {
    pub lower_quartile: f64,
    pub median: f64,
    pub upper_quartile: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of a sorted slice.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl DeviationSummary {
    pub fn from_samples(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        Self {
            lower_quartile: quantile(&values, 0.25),
            median: quantile(&values, 0.5),
            upper_quartile: quantile(&values, 0.75),
            max: values.last().copied().unwrap_or(f64::NAN),
        }
    }
}

/// Absolute per-joint deviations between aligned trajectories, joint-major.
pub fn joint_deviations(est: &PostureTrajectory, truth: &PostureTrajectory) -> Result<Vec<Vec<f64>>> {
    if est.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: est.len() });
    }
    for (a, b) in est.times.iter().zip(&truth.times) {
        if (a - b).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("trajectories are not aligned: t = {a} vs {b}")));
        }
    }
    Ok((0..NUM_JOINTS)
        .map(|j| est.states.iter().zip(&truth.states).map(|(e, t)| (e.q[j] - t.q[j]).abs()).collect())
        .collect())
}

pub fn deviation_metrics(est: &PostureTrajectory, truth: &PostureTrajectory) -> Result<[DeviationSummary; NUM_JOINTS]> {
    let dev = joint_deviations(est, truth)?;
    let mut it = dev.into_iter().map(DeviationSummary::from_samples);
    Ok(std::array::from_fn(|_| it.next().expect("one summary per joint")))
}
