//! Teleoperation task definitions.
//!
//! ```toml
//! name = "reach"
//! start_posture = [0, 0, 0, 0, 0, 0, 1.5708, 0, 0, 0]   # optional, neutral
//!
//! [follower_start]
//! position = [0.6, 0.0, 0.3]
//! orientation = [1, 0, 0, 0]                          # w, x, y, z
//!
//! [goal]                                              # or [[waypoints]]
//! position = [0.8, 0.1, 0.5]
//! orientation = [1, 0, 0, 0]
//!
//! [ctx]                                               # RULA task context
//! legs_supported = true
//!
//! [[pauses]]                                          # optional clutch pauses
//! at_step = 40
//! steps = 20
//! ```

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    clamp_to_limits, forward_kinematics, neutral_posture, pose_serde, JointLimits, JointPosture, JointVector, Pose,
    SegmentLengths, NUM_JOINTS,
};
use crate::rng;
use crate::rula::TaskContext;

pub const DEMO_TASK_TOML: &str = include_str!("../../../../config/demo_task.toml");

/// Where the follower has to go.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskTarget {
    Goal(Pose),
    /// Visited in order; the last one is the goal.
    Path(Vec<Pose>),
}

impl TaskTarget {
    pub fn poses(&self) -> &[Pose] {
        match self {
            Self::Goal(p) => std::slice::from_ref(p),
            Self::Path(ps) => ps,
        }
    }
}

/// Clutch opening: coupling is off for `steps` steps from `at_step`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pause {
    pub at_step: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeleopTask {
    pub name: String,
    pub follower_start: Pose,
    pub target: TaskTarget,
    pub ctx: TaskContext,
    pub start_posture: JointPosture,
    pub pauses: Vec<Pause>,
}

#[derive(Serialize, Deserialize)]
struct PoseEntry(#[serde(with = "pose_serde")] Pose);

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    start_posture: Option<[f64; NUM_JOINTS]>,
    follower_start: PoseEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    goal: Option<PoseEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    waypoints: Option<Vec<PoseEntry>>,
    #[serde(default)]
    ctx: TaskContext,
    #[serde(default)]
    pauses: Vec<Pause>,
}

impl TeleopTask {
    /// The shipped demonstration task.
    pub fn demo() -> Self {
        Self::from_toml_str(DEMO_TASK_TOML).expect("shipped demo task is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawTask = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let target = match (raw.goal, raw.waypoints) {
            (Some(g), None) => TaskTarget::Goal(g.0),
            (None, Some(w)) => TaskTarget::Path(w.into_iter().map(|p| p.0).collect()),
            _ => return Err(Error::Config("a task needs exactly one of `goal` or `waypoints`".into())),
        };
        let start_posture = match raw.start_posture {
            Some(q) => JointPosture(JointVector::from(q)),
            None => neutral_posture(),
        };
        let task = Self {
            name: raw.name,
            follower_start: raw.follower_start.0,
            target,
            ctx: raw.ctx,
            start_posture,
            pauses: raw.pauses,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let (goal, waypoints) = match &self.target {
            TaskTarget::Goal(g) => (Some(PoseEntry(*g)), None),
            TaskTarget::Path(ps) => (None, Some(ps.iter().map(|p| PoseEntry(*p)).collect())),
        };
        let raw = RawTask {
            name: self.name.clone(),
            start_posture: Some(std::array::from_fn(|i| self.start_posture[i])),
            follower_start: PoseEntry(self.follower_start),
            goal,
            waypoints,
            ctx: self.ctx.clone(),
            pauses: self.pauses.clone(),
        };
        toml::to_string(&raw).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.target.poses().is_empty() {
            return Err(Error::Config("waypoint list is empty".into()));
        }
        if self.start_posture.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("start posture must be finite".into()));
        }
        self.ctx.validate()
    }

    pub fn clutch_engaged(&self, step: usize) -> bool {
        !self.pauses.iter().any(|p| step >= p.at_step && step < p.at_step + p.steps)
    }

    /// Leader pose that puts the follower on `follower_goal`, assuming the
    /// operator starts at the task's start posture.
    pub fn leader_goal(&self, follower_goal: &Pose, k: f64, psi: &SegmentLengths) -> Pose {
        let leader0 = forward_kinematics(&self.start_posture, psi);
        Pose::new(
            leader0.position + (follower_goal.position - self.follower_start.position) / k,
            follower_goal.orientation * self.follower_start.orientation.inverse() * leader0.orientation,
        )
    }

    /// A reachable goal drawn around the start: the follower goal is where a
    /// random target posture would put it.
    pub fn sampled(seed: u64, base: &TeleopTask, k: f64, psi: &SegmentLengths, lim: &JointLimits) -> Self {
        const SPREAD: [f64; NUM_JOINTS] = [0.1, 0.08, 0.15, 0.6, 0.4, 0.4, 0.5, 0.5, 0.3, 0.15];
        let mut r = rng::stream(seed, 0x7A5C, 0);
        let q0 = base.start_posture;
        let q = JointVector::from_fn(|j, _| q0[j] + SPREAD[j] * r.random_range(-1.0..1.0));
        let q_goal = clamp_to_limits(&JointPosture(q), lim);
        let leader0 = forward_kinematics(&q0, psi);
        let leader_goal = forward_kinematics(&q_goal, psi);
        let goal = Pose::new(
            base.follower_start.position + (leader_goal.position - leader0.position) * k,
            leader_goal.orientation * leader0.orientation.inverse() * base.follower_start.orientation,
        );
        Self { name: format!("{}-sampled-{seed}", base.name), target: TaskTarget::Goal(goal), pauses: vec![], ..base.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_parses_and_round_trips() {
        let t = TeleopTask::demo();
        assert!(matches!(t.target, TaskTarget::Goal(_)));
        let back = TeleopTask::from_toml_str(&t.to_toml_string().unwrap()).unwrap();
        assert_eq!(back.name, t.name);
        assert_eq!(back.ctx, t.ctx);
        assert_eq!(back.start_posture, t.start_posture);
    }

    #[test]
    fn rejects_ambiguous_targets() {
        let text = r#"
            name = "x"
            follower_start = { position = [0, 0, 0], orientation = [1, 0, 0, 0] }
        "#;
        assert!(TeleopTask::from_toml_str(text).is_err());
        let both = format!(
            "{text}\ngoal = {{ position = [0, 0, 0], orientation = [1, 0, 0, 0] }}\nwaypoints = []\n"
        );
        assert!(TeleopTask::from_toml_str(&both).is_err());
    }

    #[test]
    fn clutch_schedule() {
        let mut t = TeleopTask::demo();
        t.pauses = vec![Pause { at_step: 3, steps: 2 }];
        let engaged: Vec<bool> = (0..7).map(|k| t.clutch_engaged(k)).collect();
        assert_eq!(engaged, [true, true, true, false, false, true, true]);
    }
}
