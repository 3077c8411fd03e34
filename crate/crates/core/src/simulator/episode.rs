//! Episode logs and their CSV form.
//!
//! Columns, in order: `t`; the ten joint angles by name; `<name>_rate` for
//! each; `leader_px..leader_pz`, `leader_qw..leader_qz`; `leader_vx..leader_wz`;
//! `follower_px..follower_qz`; `opt_<name>` for the suggested posture;
//! `shadow_<name>` for the uncorrected operator; `rula_uncorrected`,
//! `rula_corrected`, `rula_optimal`; `clutch` (1 engaged); `solve_seconds`
//! (empty when no solve ran at that step).

use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::estimator::PostureTrajectory;
use crate::kinematics::{JointPosture, JointState, JointVector, Pose, Twist, JOINT_NAMES, NUM_JOINTS};

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub t: f64,
    /// Ground-truth angles and the joint rates applied from this step.
    pub state: JointState,
    pub leader: Pose,
    pub leader_twist: Twist,
    pub follower: Pose,
    /// Suggested posture in force (the current posture when none).
    pub q_star: JointPosture,
    /// Posture of the operator that ignores suggestions.
    pub shadow: JointPosture,
    pub rula_uncorrected: u8,
    pub rula_corrected: u8,
    pub rula_optimal: u8,
    pub clutch_engaged: bool,
    pub solve_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub task: String,
    pub correction: String,
    pub alpha: f64,
    pub dt: f64,
    /// Step at which the follower reached its final goal.
    pub completion_step: Option<usize>,
    pub uncorrected_completion_step: Option<usize>,
    /// Wall-clock seconds per optimizer call.
    pub solve_times: Vec<f64>,
    pub records: Vec<EpisodeRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSummary {
    pub mean: f64,
    pub max: u8,
}

impl TraceSummary {
    fn of(values: impl Iterator<Item = u8>) -> Self {
        let (mut sum, mut n, mut max) = (0.0, 0usize, 0u8);
        for v in values {
            sum += v as f64;
            n += 1;
            max = max.max(v);
        }
        Self { mean: if n == 0 { f64::NAN } else { sum / n as f64 }, max }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub uncorrected: TraceSummary,
    pub corrected: TraceSummary,
    pub optimal: TraceSummary,
    pub completion_step: Option<usize>,
    pub uncorrected_completion_step: Option<usize>,
    pub solves: usize,
    pub mean_solve_seconds: f64,
}

impl std::fmt::Display for EpisodeSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let steps = |s: Option<usize>| s.map_or("timeout".to_string(), |v| v.to_string());
        writeln!(f, "trace        mean_rula  max_rula")?;
        for (name, t) in [("uncorrected", self.uncorrected), ("corrected", self.corrected), ("optimal", self.optimal)] {
            writeln!(f, "{name:<12} {:>9.3}  {:>8}", t.mean, t.max)?;
        }
        writeln!(f, "completion steps: corrected {}, uncorrected {}", steps(self.completion_step), steps(self.uncorrected_completion_step))?;
        write!(f, "solves: {} (mean {:.4} s)", self.solves, self.mean_solve_seconds)
    }
}

impl EpisodeLog {
    pub fn converged(&self) -> bool {
        self.completion_step.is_some()
    }

    pub fn summary(&self) -> EpisodeSummary {
        let mean_solve = if self.solve_times.is_empty() {
            0.0
        } else {
            self.solve_times.iter().sum::<f64>() / self.solve_times.len() as f64
        };
        EpisodeSummary {
            uncorrected: TraceSummary::of(self.records.iter().map(|r| r.rula_uncorrected)),
            corrected: TraceSummary::of(self.records.iter().map(|r| r.rula_corrected)),
            optimal: TraceSummary::of(self.records.iter().map(|r| r.rula_optimal)),
            completion_step: self.completion_step,
            uncorrected_completion_step: self.uncorrected_completion_step,
            solves: self.solve_times.len(),
            mean_solve_seconds: mean_solve,
        }
    }

    /// Ground-truth posture trajectory of the operator.
    pub fn trajectory(&self) -> PostureTrajectory {
        PostureTrajectory { times: self.records.iter().map(|r| r.t).collect(), states: self.records.iter().map(|r| r.state).collect() }
    }
}

pub fn episode_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(JOINT_NAMES.iter().map(|n| n.to_string()));
    h.extend(JOINT_NAMES.iter().map(|n| format!("{n}_rate")));
    for p in ["leader", "follower"] {
        h.extend(["px", "py", "pz", "qw", "qx", "qy", "qz"].iter().map(|c| format!("{p}_{c}")));
        if p == "leader" {
            h.extend(["vx", "vy", "vz", "wx", "wy", "wz"].iter().map(|c| format!("leader_{c}")));
        }
    }
    h.extend(JOINT_NAMES.iter().map(|n| format!("opt_{n}")));
    h.extend(JOINT_NAMES.iter().map(|n| format!("shadow_{n}")));
    h.extend(["rula_uncorrected", "rula_corrected", "rula_optimal", "clutch", "solve_seconds"].map(String::from));
    h
}

fn pose_fields(p: &Pose) -> [f64; 7] {
    let q = p.orientation.quaternion();
    [p.position.x, p.position.y, p.position.z, q.w, q.i, q.j, q.k]
}

fn pose_from(v: &[f64]) -> Result<Pose> {
    let quat = Quaternion::new(v[3], v[4], v[5], v[6]);
    if (quat.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::Format("pose orientation is not a unit quaternion".into()));
    }
    Ok(Pose::new(Vector3::new(v[0], v[1], v[2]), UnitQuaternion::from_quaternion(quat)))
}

/// Writes the records. Episode metadata (task, correction, α, completion)
/// goes to the run manifest, not this file.
pub fn write_episode_csv(path: &Path, log: &EpisodeLog) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(episode_header())?;
    for r in &log.records {
        let mut row: Vec<String> = Vec::with_capacity(80);
        let mut push = |v: f64| row.push(format!("{v:e}"));
        push(r.t);
        r.state.q.iter().chain(r.state.qdot.iter()).for_each(|v| push(*v));
        pose_fields(&r.leader).into_iter().for_each(&mut push);
        r.leader_twist.to_vector().iter().for_each(|v| push(*v));
        pose_fields(&r.follower).into_iter().for_each(&mut push);
        r.q_star.iter().chain(r.shadow.iter()).for_each(|v| push(*v));
        row.extend([r.rula_uncorrected, r.rula_corrected, r.rula_optimal].map(|v| v.to_string()));
        row.push(if r.clutch_engaged { "1" } else { "0" }.to_string());
        row.push(r.solve_time.map_or(String::new(), |v| format!("{v:e}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads records back; metadata fields are left empty.
pub fn read_episode_csv(path: &Path) -> Result<EpisodeLog> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows = rdr.records();
    let header = rows.next().ok_or_else(|| Error::Format("empty episode file".into()))??;
    let expected = episode_header();
    if header.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Format("unexpected episode header".into()));
    }
    let mut records = Vec::new();
    for (i, rec) in rows.enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != expected.len() {
            return Err(Error::Format(format!("line {line}: expected {} columns, found {}", expected.len(), rec.len())));
        }
        let num = |k: usize| -> Result<f64> {
            rec[k].parse::<f64>().map_err(|_| Error::Format(format!("line {line}: bad number {:?}", &rec[k])))
        };
        let nums = |a: usize, b: usize| -> Result<Vec<f64>> { (a..b).map(num).collect() };
        let score = |k: usize| -> Result<u8> {
            rec[k].parse::<u8>().map_err(|_| Error::Format(format!("line {line}: bad score {:?}", &rec[k])))
        };
        let n = NUM_JOINTS;
        let mut c = 1;
        let q = JointVector::from_vec(nums(c, c + n)?);
        c += n;
        let qdot = JointVector::from_vec(nums(c, c + n)?);
        c += n;
        let leader = pose_from(&nums(c, c + 7)?)?;
        c += 7;
        let tw = nums(c, c + 6)?;
        c += 6;
        let follower = pose_from(&nums(c, c + 7)?)?;
        c += 7;
        let q_star = JointVector::from_vec(nums(c, c + n)?);
        c += n;
        let shadow = JointVector::from_vec(nums(c, c + n)?);
        c += n;
        records.push(EpisodeRecord {
            t: num(0)?,
            state: JointState { q: JointPosture(q), qdot },
            leader,
            leader_twist: Twist::from_vector(&nalgebra::Vector6::from_column_slice(&tw)),
            follower,
            q_star: JointPosture(q_star),
            shadow: JointPosture(shadow),
            rula_uncorrected: score(c)?,
            rula_corrected: score(c + 1)?,
            rula_optimal: score(c + 2)?,
            clutch_engaged: &rec[c + 3] == "1",
            solve_time: if rec[c + 4].is_empty() { None } else { Some(num(c + 4)?) },
        });
    }
    let solve_times = records.iter().filter_map(|r| r.solve_time).collect();
    Ok(EpisodeLog {
        task: String::new(),
        correction: String::new(),
        alpha: f64::NAN,
        dt: f64::NAN,
        completion_step: None,
        uncorrected_completion_step: None,
        solve_times,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{JointLimits, SegmentLengths};
    use crate::simulator::{run_episode, CorrectionSource, SimConfig, TeleopTask};

    #[test]
    fn csv_round_trip() {
        let log = run_episode(
            &TeleopTask::demo(),
            &SimConfig { max_steps: 20, ..Default::default() },
            &CorrectionSource::None,
            &SegmentLengths::default(),
            &JointLimits::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episode.csv");
        write_episode_csv(&path, &log).unwrap();
        let back = read_episode_csv(&path).unwrap();
        assert_eq!(back.records.len(), log.records.len());
        for (a, b) in back.records.iter().zip(&log.records) {
            assert_eq!(a.state, b.state);
            assert_eq!(a.rula_corrected, b.rula_corrected);
            assert_eq!(a.clutch_engaged, b.clutch_engaged);
            assert!((a.follower.position - b.follower.position).norm() < 1e-15);
        }
    }
}
