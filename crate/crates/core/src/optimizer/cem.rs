//! Cross-entropy method solvers.

use std::time::Instant;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{rollout_posture, Objective, OnlineProblem, RolloutProblem, Solution, SolveStatus};
use crate::error::{Error, Result};
use crate::kinematics::{clamp_to_limits, neutral_posture, JointLimits, JointPosture, JointVector};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CemConfig {
    pub samples: usize,
    pub elite_fraction: f64,
    pub iterations: usize,
    /// Initial sampling std, radians.
    pub init_std: f64,
    /// Floor on the refitted std, radians.
    pub min_std: f64,
    pub seed: u64,
    /// Gauss-Newton steps used to pull each sample onto the task constraint.
    pub projection_iters: usize,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            elite_fraction: 0.1,
            iterations: 20,
            init_std: 0.3,
            min_std: 0.01,
            seed: 0,
            projection_iters: 5,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 || self.iterations == 0 {
            return Err(Error::InvalidArgument("CEM needs at least two samples and one iteration".into()));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!("elite fraction must lie in (0, 1), got {}", self.elite_fraction)));
        }
        if !(self.init_std > 0.0 && self.min_std > 0.0) {
            return Err(Error::InvalidArgument("CEM standard deviations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Scored {
    q: JointPosture,
    /// `+∞` when infeasible.
    cost: f64,
    violation: f64,
}

fn run_cem(
    mean0: &JointPosture,
    incumbent: Scored,
    cfg: &CemConfig,
    lim: &JointLimits,
    eval: &(dyn Fn(&JointPosture) -> Scored + Sync),
) -> Result<Solution> {
    cfg.validate()?;
    let started = Instant::now();
    let mut mean = mean0.0;
    let mut std = JointVector::repeat(cfg.init_std);
    let mut best = incumbent;
    let mut least_violation = incumbent.violation;
    let mut evaluations = 1;
    let mut trace = Vec::new();
    let mut status = SolveStatus::MaxIters;
    let mut iterations = 0;
    for it in 0..cfg.iterations {
        iterations = it + 1;
        let scored: Vec<Scored> = (0..cfg.samples)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::stream(cfg.seed, 0xCE00 + it as u64, i as u64);
                let q = JointPosture(JointVector::from_fn(|j, _| mean[j] + std[j] * r.sample::<f64, _>(StandardNormal)));
                eval(&clamp_to_limits(&q, lim))
            })
            .collect();
        evaluations += scored.len();
        least_violation = scored.iter().map(|s| s.violation).fold(least_violation, f64::min);
        let mut feasible: Vec<&Scored> = scored.iter().filter(|s| s.cost.is_finite()).collect();
        if feasible.is_empty() {
            continue;
        }
        feasible.sort_by(|a, b| a.cost.total_cmp(&b.cost));
        if feasible[0].cost < best.cost {
            best = *feasible[0];
        }
        let n_elite = ((cfg.elite_fraction * cfg.samples as f64).ceil() as usize).clamp(1, feasible.len());
        let elites = &feasible[..n_elite];
        let k = elites.len() as f64;
        mean = elites.iter().fold(JointVector::zeros(), |acc, s| acc + s.q.0) / k;
        let var = elites.iter().fold(JointVector::zeros(), |acc, s| acc + (s.q.0 - mean).map(|d| d * d)) / k;
        std = var.map(|v| v.sqrt().max(cfg.min_std));
        trace.push(elites.iter().map(|s| s.cost).sum::<f64>() / k);
        if std.iter().all(|&s| s <= cfg.min_std) {
            status = SolveStatus::Converged;
            break;
        }
    }
    if !best.cost.is_finite() {
        return Err(Error::Infeasible { violation: least_violation });
    }
    Ok(Solution {
        q: best.q,
        value: best.cost,
        status,
        iterations,
        evaluations,
        violation: best.violation,
        trace,
        elapsed: started.elapsed(),
    })
}

/// Sample-based solve of the online problem. Every sample is pulled onto the
/// task constraint before scoring; the current posture competes as a
/// candidate, so the result never scores worse than it.
pub fn solve_online_cem(p: &OnlineProblem, obj: &dyn Objective, cfg: &CemConfig) -> Result<Solution> {
    p.validate()?;
    let current = clamp_to_limits(&p.q_current.q, &p.limits);
    let incumbent = if p.is_feasible(&current) {
        current
    } else {
        let restored = p.project(&current, 30);
        if !p.is_feasible(&restored) {
            return Err(Error::Infeasible { violation: p.violation(&restored) });
        }
        restored
    };
    let eval = |q: &JointPosture| {
        let qp = p.project(q, cfg.projection_iters);
        let violation = p.violation(&qp);
        let cost = if violation <= 1.0 { obj.value(&qp) } else { f64::INFINITY };
        Scored { q: qp, cost, violation }
    };
    let start = Scored { q: incumbent, cost: obj.value(&incumbent), violation: p.violation(&incumbent) };
    run_cem(&current, start, cfg, &p.limits, &eval)
}

fn rollout_cost(q0: &JointPosture, rp: &RolloutProblem, obj: &dyn Objective) -> Scored {
    match rollout_posture(q0, rp) {
        Ok(traj) => Scored { q: *q0, cost: traj.states.iter().map(|s| obj.value(&s.q)).sum(), violation: 0.0 },
        Err(_) => Scored { q: *q0, cost: f64::INFINITY, violation: f64::INFINITY },
    }
}

fn solve_rollout(rp: &RolloutProblem, start: &JointPosture, obj: &dyn Objective, cfg: &CemConfig) -> Result<Solution> {
    rp.validate()?;
    let start = clamp_to_limits(start, &rp.limits);
    let incumbent = rollout_cost(&start, rp, obj);
    let eval = |q: &JointPosture| rollout_cost(q, rp, obj);
    run_cem(&start, incumbent, cfg, &rp.limits, &eval)
}

/// Start posture minimizing the risk summed along the replayed recording.
/// Sampling is centered on the neutral posture, which is also a candidate.
pub fn solve_initial(rp: &RolloutProblem, obj: &dyn Objective, cfg: &CemConfig) -> Result<Solution> {
    if rp.start_index != 0 {
        return Err(Error::InvalidArgument("initial optimization replays from the first twist".into()));
    }
    solve_rollout(rp, &neutral_posture(), obj, cfg)
}

/// Resume posture after a pause at step `t_p` (`-1` for before the first
/// twist). The paused posture is the sampling center and a candidate.
pub fn solve_reconfig(
    rp: &RolloutProblem,
    t_p: i64,
    q_paused: &JointPosture,
    obj: &dyn Objective,
    cfg: &CemConfig,
) -> Result<Solution> {
    let len = rp.twists.len() as i64;
    if t_p < -1 || t_p >= len {
        return Err(Error::InvalidArgument(format!("pause step {t_p} outside [-1, {}]", len - 1)));
    }
    let shifted = RolloutProblem { start_index: (t_p + 1) as usize, ..rp.clone() };
    solve_rollout(&shifted, q_paused, obj, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::tests::problem_at;
    use crate::optimizer::{ErgonomicsObjective, Quadratic};
    use crate::kinematics::{SegmentLengths, Twist};
    use crate::rula::TaskContext;
    use nalgebra::Vector3;

    fn small() -> CemConfig {
        CemConfig { samples: 600, iterations: 25, ..Default::default() }
    }

    #[test]
    fn finds_feasible_quadratic_optimum() {
        let mut target = neutral_posture();
        target[2] = 0.2;
        target[5] = 0.3;
        let p0 = problem_at(&target);
        let mut start = target;
        start[2] = -0.1;
        start[5] = -0.1;
        let start = p0.project(&start, 30);
        let p = OnlineProblem { q_current: crate::kinematics::JointState::at_rest(start), ..p0 };
        let s = solve_online_cem(&p, &Quadratic { target }, &CemConfig { samples: 2000, ..Default::default() }).unwrap();
        assert!(p.is_feasible(&s.q));
        assert!((s.q.0 - target.0).amax() < 0.02, "{:?}", s.q.0 - target.0);
    }

    #[test]
    fn never_worse_than_current_and_deterministic() {
        let mut q = neutral_posture();
        q[3] = 0.9;
        q[0] = 0.3;
        let p = problem_at(&q);
        let obj = ErgonomicsObjective::RulaRaw { ctx: TaskContext::seated_neutral() };
        let s = solve_online_cem(&p, &obj, &small()).unwrap();
        assert!(s.value <= obj.value(&q));
        assert!(p.is_feasible(&s.q) && p.limits.contains(&s.q));
        let again = solve_online_cem(&p, &obj, &small()).unwrap();
        assert_eq!(s.q, again.q);
    }

    #[test]
    fn unreachable_reports_violation() {
        let mut p = problem_at(&neutral_posture());
        p.z_current.pose.position.z += 2.0;
        match solve_online_cem(&p, &Quadratic { target: neutral_posture() }, &small()) {
            Err(Error::Infeasible { violation }) => assert!(violation > 1.0),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    fn recording() -> RolloutProblem {
        let tw = Twist { linear: Vector3::new(0.1, 0.05, 0.0), angular: Vector3::zeros() };
        RolloutProblem::new(vec![tw; 10], 0.05, SegmentLengths::default(), JointLimits::default())
    }

    #[test]
    fn rollout_solvers_keep_candidates() {
        let obj = ErgonomicsObjective::RulaRaw { ctx: TaskContext::seated_neutral() };
        let rp = recording();
        let neutral_cost = rollout_cost(&neutral_posture(), &rp, &obj).cost;
        let s = solve_initial(&rp, &obj, &small()).unwrap();
        assert!(s.value <= neutral_cost);

        let same = solve_reconfig(&rp, -1, &neutral_posture(), &obj, &small()).unwrap();
        assert_eq!(same.q, s.q);

        let mut paused = neutral_posture();
        paused[3] = 1.2;
        let last = solve_reconfig(&rp, 9, &paused, &obj, &small()).unwrap();
        assert!(last.value <= obj.value(&paused));
        assert!(solve_reconfig(&rp, 10, &paused, &obj, &small()).is_err());
    }

    #[test]
    fn zero_length_recording_is_single_posture() {
        let obj = Quadratic { target: neutral_posture() };
        let rp = RolloutProblem::new(vec![], 0.05, SegmentLengths::default(), JointLimits::default());
        let s = solve_initial(&rp, &obj, &small()).unwrap();
        assert_eq!(s.value, obj.value(&s.q));
    }
}
