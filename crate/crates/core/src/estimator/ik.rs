//! Least-squares inverse-kinematics baselines.

use nalgebra::{SMatrix, SVector, Vector6};
use serde::{Deserialize, Serialize};

use super::{check_monotone, EstimatorConfig, Observation, PostureTrajectory};
use crate::error::{Error, Result};
use crate::kinematics::{
    clamp_to_limits, forward_kinematics, jacobian, neutral_posture, pose_error, Jacobian, JointLimits, JointPosture,
    JointState, JointVector, SegmentLengths, NUM_JOINTS,
};

/// Weights and solver limits shared by both baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkConfig {
    pub obs_std: [f64; 6],
    pub vel_obs_std: [f64; 6],
    /// Acceleration std used by the trajectory smoother's motion term.
    pub process_accel_std: [f64; NUM_JOINTS],
    pub max_iters: usize,
    /// Damping on joint rates when resolving the observed twist.
    pub rate_damping: f64,
    /// A step whose normalized RMS pose residual stays above this is flagged
    /// and keeps the previous estimate.
    pub max_residual_rms: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self::from(&EstimatorConfig::default())
    }
}

impl From<&EstimatorConfig> for IkConfig {
    fn from(cfg: &EstimatorConfig) -> Self {
        Self {
            obs_std: cfg.obs_std,
            vel_obs_std: cfg.vel_obs_std,
            process_accel_std: cfg.process_accel_std,
            max_iters: 50,
            rate_damping: 1e-3,
            max_residual_rms: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkRun {
    pub trajectory: PostureTrajectory,
    /// Steps where the solver did not reach the observation.
    pub flagged_steps: Vec<usize>,
}

type Mat10 = SMatrix<f64, NUM_JOINTS, NUM_JOINTS>;

fn weighted(e: &Vector6<f64>, std: &[f64; 6]) -> Vector6<f64> {
    Vector6::from_fn(|k, _| e[k] / std[k])
}

fn weighted_jacobian(j: &Jacobian, std: &[f64; 6]) -> Jacobian {
    Jacobian::from_fn(|r, c| j[(r, c)] / std[r])
}

fn pose_cost(q: &JointPosture, obs: &Observation, psi: &SegmentLengths, cfg: &IkConfig) -> f64 {
    0.5 * weighted(&pose_error(&forward_kinematics(q, psi), &obs.pose), &cfg.obs_std).norm_squared()
}

/// Box-projected Levenberg-Marquardt on the weighted pose residual.
fn solve_pose(start: &JointPosture, obs: &Observation, psi: &SegmentLengths, lim: &JointLimits, cfg: &IkConfig) -> JointPosture {
    let mut q = clamp_to_limits(start, lim);
    let mut cost = pose_cost(&q, obs, psi, cfg);
    let mut lambda = 1e-3;
    for _ in 0..cfg.max_iters {
        if cost < 1e-14 {
            break;
        }
        let r = weighted(&pose_error(&forward_kinematics(&q, psi), &obs.pose), &cfg.obs_std);
        let jw = weighted_jacobian(&jacobian(&q, psi), &cfg.obs_std);
        let jtj: Mat10 = jw.transpose() * jw;
        let g: JointVector = jw.transpose() * r;
        let mut improved = false;
        for _ in 0..12 {
            let h = jtj + Mat10::identity() * lambda;
            let Some(step) = h.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let trial = clamp_to_limits(&JointPosture(q.0 + step), lim);
            let c = pose_cost(&trial, obs, psi, cfg);
            if c < cost {
                let gain = cost - c;
                q = trial;
                cost = c;
                lambda = (lambda / 3.0).max(1e-9);
                improved = gain > 1e-12 * (1.0 + cost);
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    q
}

/// Damped least-squares joint rates reproducing the observed twist.
fn solve_rates(q: &JointPosture, obs: &Observation, psi: &SegmentLengths, cfg: &IkConfig) -> JointVector {
    let jw = weighted_jacobian(&jacobian(q, psi), &cfg.vel_obs_std);
    let v = weighted(&obs.twist.to_vector(), &cfg.vel_obs_std);
    let h: Mat10 = jw.transpose() * jw + Mat10::identity() * cfg.rate_damping;
    h.cholesky().map(|c| c.solve(&(jw.transpose() * v))).unwrap_or_else(JointVector::zeros)
}

/// Per-step bounded least squares, warm-started from the previous solution
/// and from the neutral posture at the first step.
pub fn online_ik(observations: &[Observation], psi: &SegmentLengths, lim: &JointLimits, cfg: &IkConfig) -> Result<IkRun> {
    if observations.is_empty() {
        return Err(Error::InvalidArgument("at least one observation is required".into()));
    }
    check_monotone(&observations.iter().map(|o| o.time).collect::<Vec<_>>())?;
    let mut q = clamp_to_limits(&neutral_posture(), lim);
    let mut traj = PostureTrajectory::default();
    let mut flagged = Vec::new();
    for (k, obs) in observations.iter().enumerate() {
        let candidate = solve_pose(&q, obs, psi, lim, cfg);
        let rms = (2.0 * pose_cost(&candidate, obs, psi, cfg) / 6.0).sqrt();
        if rms.is_finite() && rms <= cfg.max_residual_rms {
            q = candidate;
        } else {
            flagged.push(k);
        }
        let qdot = solve_rates(&q, obs, psi, cfg);
        traj.times.push(obs.time);
        traj.states.push(JointState { q, qdot });
    }
    Ok(IkRun { trajectory: traj, flagged_steps: flagged })
}

/// Symmetric positive definite band matrix (upper band stored row-wise).
struct Band {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl Band {
    fn new(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(i <= j && j - i <= self.bw);
        &mut self.data[i * (self.bw + 1) + (j - i)]
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.bw + 1) + (j - i)]
    }

    /// In-place Cholesky `A = UᵀU`; false if not positive definite.
    fn factor(&mut self) -> bool {
        for i in 0..self.n {
            let mut d = self.get(i, i);
            for k in i.saturating_sub(self.bw)..i {
                d -= self.get(k, i).powi(2);
            }
            if !(d > 0.0) {
                return false;
            }
            let d = d.sqrt();
            *self.at(i, i) = d;
            for j in i + 1..(i + self.bw + 1).min(self.n) {
                let mut s = self.get(i, j);
                for k in j.saturating_sub(self.bw)..i {
                    s -= self.get(k, i) * self.get(k, j);
                }
                *self.at(i, j) = s / d;
            }
        }
        true
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = rhs.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.get(k, i) * y[k];
            }
            y[i] = s / self.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..(i + self.bw + 1).min(n) {
                s -= self.get(i, j) * y[j];
            }
            y[i] = s / self.get(i, i);
        }
        y
    }
}

/// One stacked residual block with its Jacobian blocks (per joint block index).
struct Block<const R: usize> {
    r: SVector<f64, R>,
    parts: Vec<(usize, SMatrix<f64, R, NUM_JOINTS>)>,
}

fn forward_rate(qs: &[JointPosture], times: &[f64], t: usize) -> JointVector {
    (qs[t + 1].0 - qs[t].0) / (times[t + 1] - times[t])
}

fn accel_weights(cfg: &IkConfig) -> JointVector {
    JointVector::from_fn(|j, _| 1.0 / cfg.process_accel_std[j])
}

fn obs_block(qs: &[JointPosture], obs: &[Observation], psi: &SegmentLengths, cfg: &IkConfig, t: usize) -> Block<6> {
    let r = weighted(&pose_error(&forward_kinematics(&qs[t], psi), &obs[t].pose), &cfg.obs_std);
    Block { r, parts: vec![(t, weighted_jacobian(&jacobian(&qs[t], psi), &cfg.obs_std))] }
}

fn vel_block(qs: &[JointPosture], obs: &[Observation], times: &[f64], psi: &SegmentLengths, cfg: &IkConfig, t: usize) -> Block<6> {
    let dt = times[t + 1] - times[t];
    let jw = weighted_jacobian(&jacobian(&qs[t], psi), &cfg.vel_obs_std);
    let r = jw * forward_rate(qs, times, t) - weighted(&obs[t].twist.to_vector(), &cfg.vel_obs_std);
    Block { r, parts: vec![(t, -jw / dt), (t + 1, jw / dt)] }
}

fn accel_block(qs: &[JointPosture], times: &[f64], cfg: &IkConfig, t: usize) -> Block<NUM_JOINTS> {
    let dt0 = times[t + 1] - times[t];
    let dt1 = times[t + 2] - times[t + 1];
    let w = accel_weights(cfg);
    let qdd = (forward_rate(qs, times, t + 1) - forward_rate(qs, times, t)) / dt0;
    let r = qdd.component_mul(&w);
    let d = Mat10::from_diagonal(&w);
    let a0 = d / (dt0 * dt0);
    let a2 = d / (dt1 * dt0);
    Block { r, parts: vec![(t, a0), (t + 1, -(a0 + a2)), (t + 2, a2)] }
}

/// Observation, rate and motion-model terms of the trajectory objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub observation: f64,
    pub velocity: f64,
    pub motion: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.observation + self.velocity + self.motion
    }
}

fn objective_terms(qs: &[JointPosture], obs: &[Observation], times: &[f64], psi: &SegmentLengths, cfg: &IkConfig) -> ObjectiveTerms {
    let t_len = qs.len();
    let observation = (0..t_len).map(|t| 0.5 * obs_block(qs, obs, psi, cfg, t).r.norm_squared()).sum();
    let velocity = (0..t_len.saturating_sub(1)).map(|t| 0.5 * vel_block(qs, obs, times, psi, cfg, t).r.norm_squared()).sum();
    let motion = (0..t_len.saturating_sub(2)).map(|t| 0.5 * accel_block(qs, times, cfg, t).r.norm_squared()).sum();
    ObjectiveTerms { observation, velocity, motion }
}

/// Trajectory objective evaluated on the angles of `traj` (rates are implied
/// by finite differences).
pub fn trajectory_objective(
    traj: &PostureTrajectory,
    observations: &[Observation],
    psi: &SegmentLengths,
    cfg: &IkConfig,
) -> Result<ObjectiveTerms> {
    if traj.len() != observations.len() {
        return Err(Error::DimensionMismatch { expected: observations.len(), got: traj.len() });
    }
    let qs: Vec<JointPosture> = traj.states.iter().map(|s| s.q).collect();
    Ok(objective_terms(&qs, observations, &traj.times, psi, cfg))
}

fn accumulate<const R: usize>(h: &mut Band, g: &mut [f64], b: &Block<R>) {
    for (bi, ji) in &b.parts {
        let gi = ji.transpose() * b.r;
        for a in 0..NUM_JOINTS {
            g[bi * NUM_JOINTS + a] += gi[a];
        }
        for (bj, jj) in &b.parts {
            if bj < bi {
                continue;
            }
            let m = ji.transpose() * jj;
            for a in 0..NUM_JOINTS {
                for c in 0..NUM_JOINTS {
                    let (r, col) = (bi * NUM_JOINTS + a, bj * NUM_JOINTS + c);
                    if r <= col {
                        *h.at(r, col) += m[(a, c)];
                    }
                }
            }
        }
    }
}

/// Whole-trajectory least squares over observation, rate and motion-model
/// residuals, initialized from [`online_ik`].
pub fn offline_traj_ik(observations: &[Observation], psi: &SegmentLengths, lim: &JointLimits, cfg: &IkConfig) -> Result<IkRun> {
    let init = online_ik(observations, psi, lim, cfg)?;
    let times = init.trajectory.times.clone();
    let t_len = times.len();
    let n = t_len * NUM_JOINTS;
    let bw = 3 * NUM_JOINTS - 1;
    let mut qs: Vec<JointPosture> = init.trajectory.states.iter().map(|s| s.q).collect();
    let mut cost = objective_terms(&qs, observations, &times, psi, cfg).total();
    let mut lambda = 1e-3;
    for _ in 0..cfg.max_iters {
        let mut h = Band::new(n, bw);
        let mut g = vec![0.0; n];
        for t in 0..t_len {
            accumulate(&mut h, &mut g, &obs_block(&qs, observations, psi, cfg, t));
        }
        for t in 0..t_len.saturating_sub(1) {
            accumulate(&mut h, &mut g, &vel_block(&qs, observations, &times, psi, cfg, t));
        }
        for t in 0..t_len.saturating_sub(2) {
            accumulate(&mut h, &mut g, &accel_block(&qs, &times, cfg, t));
        }
        let mut improved = false;
        for _ in 0..12 {
            let mut damped = Band { n, bw, data: h.data.clone() };
            for i in 0..n {
                *damped.at(i, i) += lambda;
            }
            if !damped.factor() {
                lambda *= 10.0;
                continue;
            }
            let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
            let step = damped.solve(&neg_g);
            let trial: Vec<JointPosture> = qs
                .iter()
                .enumerate()
                .map(|(t, q)| {
                    let d = JointVector::from_fn(|j, _| step[t * NUM_JOINTS + j]);
                    clamp_to_limits(&JointPosture(q.0 + d), lim)
                })
                .collect();
            let c = objective_terms(&trial, observations, &times, psi, cfg).total();
            if c < cost {
                let gain = cost - c;
                qs = trial;
                cost = c;
                lambda = (lambda / 3.0).max(1e-9);
                improved = gain > 1e-10 * (1.0 + cost);
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    let states = (0..t_len)
        .map(|t| {
            let qdot = if t_len < 2 {
                init.trajectory.states[t].qdot
            } else {
                forward_rate(&qs, &times, t.min(t_len - 2))
            };
            JointState { q: qs[t], qdot }
        })
        .collect();
    Ok(IkRun { trajectory: PostureTrajectory { times, states }, flagged_steps: init.flagged_steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{task_velocity, Twist};

    fn observe(states: &[JointState], dt: f64, psi: &SegmentLengths) -> Vec<Observation> {
        states
            .iter()
            .enumerate()
            .map(|(k, s)| Observation { time: k as f64 * dt, pose: forward_kinematics(&s.q, psi), twist: task_velocity(s, psi) })
            .collect()
    }

    fn sweep(n: usize, dt: f64) -> Vec<JointState> {
        (0..n)
            .map(|k| {
                let t = k as f64 * dt;
                let mut q = neutral_posture();
                let mut qdot = JointVector::zeros();
                q[3] = 0.4 * (1.0 - (t).cos());
                qdot[3] = 0.4 * t.sin();
                q[6] = 1.5 - 0.3 * t.sin();
                qdot[6] = -0.3 * t.cos();
                JointState { q, qdot }
            })
            .collect()
    }

    #[test]
    fn band_cholesky_matches_dense() {
        let n = 25;
        let bw = 4;
        let mut band = Band::new(n, bw);
        let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i..(i + bw + 1).min(n) {
                let v = if i == j { 6.0 + i as f64 * 0.1 } else { 1.0 / (1.0 + (i + 2 * j) as f64) };
                *band.at(i, j) = v;
                dense[(i, j)] = v;
                dense[(j, i)] = v;
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        assert!(band.factor());
        let x = band.solve(&rhs);
        let expect = dense.cholesky().unwrap().solve(&nalgebra::DVector::from_vec(rhs));
        for i in 0..n {
            assert!((x[i] - expect[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn neutral_observation_returns_neutral() {
        let psi = SegmentLengths::default();
        let lim = JointLimits::default();
        let obs = observe(&[JointState::at_rest(neutral_posture())], 0.05, &psi);
        let run = online_ik(&obs, &psi, &lim, &IkConfig::default()).unwrap();
        let q = run.trajectory.states[0].q;
        let e = pose_error(&forward_kinematics(&q, &psi), &obs[0].pose);
        assert!(e.norm() < 1e-6);
        assert!(run.flagged_steps.is_empty());
    }

    #[test]
    fn online_tracks_reachable_sweep() {
        let psi = SegmentLengths::default();
        let lim = JointLimits::default();
        let cfg = IkConfig::default();
        let truth = sweep(40, 0.05);
        let obs = observe(&truth, 0.05, &psi);
        let run = online_ik(&obs, &psi, &lim, &cfg).unwrap();
        assert!(run.flagged_steps.is_empty());
        for (s, o) in run.trajectory.states.iter().zip(&obs) {
            assert!(lim.contains(&s.q));
            assert!(pose_cost(&s.q, o, &psi, &cfg) < 1e-6);
        }
    }

    #[test]
    fn unreachable_observation_is_flagged() {
        let psi = SegmentLengths::default();
        let lim = JointLimits::default();
        let mut obs = observe(&[JointState::at_rest(neutral_posture())], 0.05, &psi);
        obs[0].pose.position.x += 5.0;
        let run = online_ik(&obs, &psi, &lim, &IkConfig::default()).unwrap();
        assert_eq!(run.flagged_steps, vec![0]);
        assert_eq!(run.trajectory.states[0].q, neutral_posture());
    }

    #[test]
    fn offline_descends_and_smooths() {
        use rand::Rng;
        let psi = SegmentLengths::default();
        let lim = JointLimits::default();
        let cfg = IkConfig::default();
        let truth = sweep(30, 0.05);
        let mut obs = observe(&truth, 0.05, &psi);
        let mut r = crate::rng::seeded(3);
        for o in obs.iter_mut() {
            o.pose.position += nalgebra::Vector3::from_fn(|_, _| r.random_range(-0.004..0.004));
            o.twist = Twist::from_vector(&(o.twist.to_vector() + Vector6::from_fn(|_, _| r.random_range(-0.02..0.02))));
        }
        let online = online_ik(&obs, &psi, &lim, &cfg).unwrap();
        let offline = offline_traj_ik(&obs, &psi, &lim, &cfg).unwrap();
        let before = trajectory_objective(&online.trajectory, &obs, &psi, &cfg).unwrap();
        let after = trajectory_objective(&offline.trajectory, &obs, &psi, &cfg).unwrap();
        assert!(after.total() <= before.total());
        assert!(after.motion < before.motion, "{after:?} vs {before:?}");
        assert!(offline.trajectory.states.iter().all(|s| lim.contains(&s.q)));
    }
}
