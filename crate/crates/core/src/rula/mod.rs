//! RULA (Rapid Upper Limb Assessment) scoring of the interacting arm.
//!
//! Arm and wrist sub-scores come from the joint angles of the 10-DOF model,
//! trunk scores from the three torso joints, and everything the model does
//! not capture (neck, legs, load, repetition, support) from a [`TaskContext`].
//! Some adjustments can be triggered either by an explicit context flag or by
//! the corresponding joint exceeding a threshold; both are listed below.
//!
//! | sub-score   | source                         | bands (degrees)                              |
//! |-------------|--------------------------------|----------------------------------------------|
//! | upper arm   | shoulder flexion               | ext >20: 2, ±20: 1, 20–45: 2, 45–90: 3, >90: 4 |
//! | lower arm   | elbow flexion                  | 60–100: 1, else 2                            |
//! | wrist       | wrist flexion                  | <5: 1, 5–15: 2, >15: 3                       |
//! | wrist twist | pronation                      | within ±45: 1, else 2                        |
//! | neck        | `neck_angle`                   | 0–10: 1, 10–20: 2, >20: 3, extension: 4      |
//! | trunk       | torso flexion                  | ±5: 1, 5–20 or extension: 2, 20–60: 3, >60: 4 |
//! | legs        | `legs_supported`               | supported: 1, else 2                         |
//!
//! Joint-driven adjustments: upper arm +1 above 45° abduction, wrist +1
//! beyond 10° deviation, trunk +1 each beyond 20° axial twist or side bend.

mod dataset;
pub mod tables;

pub use dataset::{
    generate_dataset, read_dataset, read_dataset_csv, sample_posture, write_dataset, write_dataset_csv, CtxSampler,
    DatasetConfig, LabeledPosture, PostureDataset, DATASET_MAGIC, DATASET_VERSION,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    JointPosture, ELBOW_FLEXION, FOREARM_PRONATION, SHOULDER_ABDUCTION, SHOULDER_FLEXION, TORSO_AXIAL_ROTATION,
    TORSO_FLEXION, TORSO_LATERAL_BEND, WRIST_DEVIATION, WRIST_FLEXION,
};

fn deg(d: f64) -> f64 {
    d.to_radians()
}

/// Angle thresholds, in radians.
pub mod thresholds {
    use super::deg;

    pub fn upper_arm_neutral() -> f64 {
        deg(20.0)
    }
    pub fn upper_arm_moderate() -> f64 {
        deg(45.0)
    }
    pub fn upper_arm_high() -> f64 {
        deg(90.0)
    }
    pub fn shoulder_abducted() -> f64 {
        deg(45.0)
    }
    pub fn elbow_low() -> f64 {
        deg(60.0)
    }
    pub fn elbow_high() -> f64 {
        deg(100.0)
    }
    pub fn wrist_neutral() -> f64 {
        deg(5.0)
    }
    pub fn wrist_moderate() -> f64 {
        deg(15.0)
    }
    pub fn wrist_deviated() -> f64 {
        deg(10.0)
    }
    pub fn pronation_mid_range() -> f64 {
        deg(45.0)
    }
    pub fn neck_low() -> f64 {
        deg(10.0)
    }
    pub fn neck_high() -> f64 {
        deg(20.0)
    }
    pub fn trunk_neutral() -> f64 {
        deg(5.0)
    }
    pub fn trunk_moderate() -> f64 {
        deg(20.0)
    }
    pub fn trunk_high() -> f64 {
        deg(60.0)
    }
    pub fn trunk_twist() -> f64 {
        deg(20.0)
    }
    pub fn trunk_side_bend() -> f64 {
        deg(20.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LoadCategory {
    /// Under 2 kg, intermittent.
    #[default]
    None,
    /// 2–10 kg, intermittent.
    Low,
    /// 2–10 kg, static or repeated.
    Medium,
    /// Over 10 kg, or shock loading.
    High,
}

impl LoadCategory {
    pub const ALL: [LoadCategory; 4] = [Self::None, Self::Low, Self::Medium, Self::High];

    pub fn score(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("invalid load category code {code}")))
    }
}

/// Task parameters of the RULA worksheet that the posture does not carry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TaskContext {
    pub load_category: LoadCategory,
    /// Posture held longer than a minute.
    pub static_muscle_use: bool,
    /// Action repeated four or more times per minute.
    pub repetition: bool,
    /// Neck flexion in radians; negative is extension.
    pub neck_angle: f64,
    pub neck_twist_or_side_bend: bool,
    pub trunk_supported: bool,
    pub legs_supported: bool,
    pub arm_supported: bool,
    pub shoulder_raised: bool,
    pub arm_abducted_flag: bool,
    pub working_across_midline: bool,
    pub wrist_bent_from_midline: bool,
    pub wrist_twist_extreme: bool,
}

impl TaskContext {
    /// Seated, feet on the floor, light intermittent work, slight neck flexion.
    pub fn seated_neutral() -> Self {
        Self { neck_angle: 0.1, legs_supported: true, ..Self::default() }
    }

    /// The boolean fields in storage order (see [`Self::FLAG_NAMES`]).
    pub fn flags(&self) -> [bool; 11] {
        [
            self.static_muscle_use,
            self.repetition,
            self.neck_twist_or_side_bend,
            self.trunk_supported,
            self.legs_supported,
            self.arm_supported,
            self.shoulder_raised,
            self.arm_abducted_flag,
            self.working_across_midline,
            self.wrist_bent_from_midline,
            self.wrist_twist_extreme,
        ]
    }

    pub const FLAG_NAMES: [&'static str; 11] = [
        "static_muscle_use",
        "repetition",
        "neck_twist_or_side_bend",
        "trunk_supported",
        "legs_supported",
        "arm_supported",
        "shoulder_raised",
        "arm_abducted_flag",
        "working_across_midline",
        "wrist_bent_from_midline",
        "wrist_twist_extreme",
    ];

    pub fn from_flags(load_category: LoadCategory, neck_angle: f64, flags: &[bool]) -> Self {
        let f = |i: usize| flags.get(i).copied().unwrap_or(false);
        Self {
            load_category,
            static_muscle_use: f(0),
            repetition: f(1),
            neck_angle,
            neck_twist_or_side_bend: f(2),
            trunk_supported: f(3),
            legs_supported: f(4),
            arm_supported: f(5),
            shoulder_raised: f(6),
            arm_abducted_flag: f(7),
            working_across_midline: f(8),
            wrist_bent_from_midline: f(9),
            wrist_twist_extreme: f(10),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.neck_angle.is_finite() {
            return Err(Error::InvalidArgument("neck angle must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionLevel {
    /// Grand score 1–2.
    Acceptable,
    /// Grand score 3–4.
    Investigate,
    /// Grand score 5–6.
    InvestigateChangeSoon,
    /// Grand score 7.
    InvestigateChangeNow,
}

impl std::fmt::Display for ActionLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Acceptable => "acceptable",
            Self::Investigate => "investigate",
            Self::InvestigateChangeSoon => "investigate_change_soon",
            Self::InvestigateChangeNow => "investigate_change_now",
        };
        f.write_str(s)
    }
}

/// Action level of a grand score.
pub fn interpret(grand: u8) -> Result<ActionLevel> {
    match grand {
        1 | 2 => Ok(ActionLevel::Acceptable),
        3 | 4 => Ok(ActionLevel::Investigate),
        5 | 6 => Ok(ActionLevel::InvestigateChangeSoon),
        7 => Ok(ActionLevel::InvestigateChangeNow),
        _ => Err(Error::InvalidArgument(format!("RULA grand score must be in 1..=7, got {grand}"))),
    }
}

/// Every intermediate value of one worksheet evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RulaAssessment {
    pub upper_arm: u8,
    pub lower_arm: u8,
    pub wrist: u8,
    pub wrist_twist: u8,
    pub table_a: u8,
    pub muscle_add: u8,
    pub force_add: u8,
    pub score_c_wrist_arm: u8,
    pub neck: u8,
    pub trunk: u8,
    pub legs: u8,
    pub table_b: u8,
    pub score_d_neck_trunk_leg: u8,
    pub grand: u8,
    pub action_level: ActionLevel,
}

pub fn upper_arm_score(q: &JointPosture, ctx: &TaskContext) -> u8 {
    let flex = q[SHOULDER_FLEXION];
    let mut score: i8 = if flex < -thresholds::upper_arm_neutral() {
        2
    } else if flex <= thresholds::upper_arm_neutral() {
        1
    } else if flex <= thresholds::upper_arm_moderate() {
        2
    } else if flex <= thresholds::upper_arm_high() {
        3
    } else {
        4
    };
    if ctx.shoulder_raised {
        score += 1;
    }
    if ctx.arm_abducted_flag || q[SHOULDER_ABDUCTION] > thresholds::shoulder_abducted() {
        score += 1;
    }
    if ctx.arm_supported {
        score -= 1;
    }
    score.clamp(1, 6) as u8
}

pub fn lower_arm_score(q: &JointPosture, ctx: &TaskContext) -> u8 {
    let elbow = q[ELBOW_FLEXION];
    let base = if elbow >= thresholds::elbow_low() && elbow <= thresholds::elbow_high() { 1 } else { 2 };
    base + u8::from(ctx.working_across_midline)
}

pub fn wrist_score(q: &JointPosture, ctx: &TaskContext) -> u8 {
    let flex = q[WRIST_FLEXION].abs();
    let base = if flex < thresholds::wrist_neutral() {
        1
    } else if flex <= thresholds::wrist_moderate() {
        2
    } else {
        3
    };
    let deviated = ctx.wrist_bent_from_midline || q[WRIST_DEVIATION].abs() > thresholds::wrist_deviated();
    base + u8::from(deviated)
}

pub fn wrist_twist_score(q: &JointPosture, ctx: &TaskContext) -> u8 {
    let extreme = ctx.wrist_twist_extreme || q[FOREARM_PRONATION].abs() > thresholds::pronation_mid_range();
    1 + u8::from(extreme)
}

pub fn neck_score(ctx: &TaskContext) -> u8 {
    let a = ctx.neck_angle;
    let base = if a < 0.0 {
        4
    } else if a <= thresholds::neck_low() {
        1
    } else if a <= thresholds::neck_high() {
        2
    } else {
        3
    };
    base + u8::from(ctx.neck_twist_or_side_bend)
}

pub fn trunk_score(q: &JointPosture, ctx: &TaskContext) -> u8 {
    let flex = q[TORSO_FLEXION];
    // A well-supported seated trunk counts as upright up to the moderate band.
    let supported_upright = ctx.trunk_supported && flex.abs() <= thresholds::trunk_moderate();
    let base = if supported_upright || flex.abs() <= thresholds::trunk_neutral() {
        1
    } else if flex <= thresholds::trunk_moderate() {
        2
    } else if flex <= thresholds::trunk_high() {
        3
    } else {
        4
    };
    let twisted = q[TORSO_AXIAL_ROTATION].abs() > thresholds::trunk_twist();
    let side_bent = q[TORSO_LATERAL_BEND].abs() > thresholds::trunk_side_bend();
    base + u8::from(twisted) + u8::from(side_bent)
}

pub fn legs_score(ctx: &TaskContext) -> u8 {
    if ctx.legs_supported {
        1
    } else {
        2
    }
}

pub fn muscle_add(ctx: &TaskContext) -> u8 {
    u8::from(ctx.static_muscle_use || ctx.repetition)
}

/// Full RULA worksheet for the right arm.
pub fn score_posture(q: &JointPosture, ctx: &TaskContext) -> RulaAssessment {
    let upper_arm = upper_arm_score(q, ctx);
    let lower_arm = lower_arm_score(q, ctx);
    let wrist = wrist_score(q, ctx);
    let wrist_twist = wrist_twist_score(q, ctx);
    let table_a = tables::table_a(upper_arm, lower_arm, wrist, wrist_twist);

    let muscle_add = muscle_add(ctx);
    let force_add = ctx.load_category.score();
    let score_c = table_a + muscle_add + force_add;

    let neck = neck_score(ctx);
    let trunk = trunk_score(q, ctx);
    let legs = legs_score(ctx);
    let table_b = tables::table_b(neck, trunk, legs);
    let score_d = table_b + muscle_add + force_add;

    let grand = tables::table_c(score_c, score_d);
    RulaAssessment {
        upper_arm,
        lower_arm,
        wrist,
        wrist_twist,
        table_a,
        muscle_add,
        force_add,
        score_c_wrist_arm: score_c,
        neck,
        trunk,
        legs,
        table_b,
        score_d_neck_trunk_leg: score_d,
        grand,
        action_level: interpret(grand).expect("table C yields 1..=7"),
    }
}

/// Grand score only.
pub fn grand_score(q: &JointPosture, ctx: &TaskContext) -> u8 {
    score_posture(q, ctx).grand
}
