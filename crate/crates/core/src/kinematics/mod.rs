//! Seated upper-body kinematic model.
//!
//! The chain has ten revolute joints and ends at the grip point of the right
//! hand, which is the interaction point shared with the robot. Frames are
//! expressed in a chair frame (x forward, y left, z up, origin at the seat
//! center) and mapped into the robot base frame by [`SegmentLengths::chair_to_robot`].
//!
//! | index | joint                         | axis (parent frame)      |
//! |-------|-------------------------------|--------------------------|
//! | 0     | torso flexion                 | +y                       |
//! | 1     | torso lateral bend            | +x                       |
//! | 2     | torso axial rotation          | +z                       |
//! | 3     | shoulder flexion              | −y                       |
//! | 4     | shoulder abduction            | −x                       |
//! | 5     | shoulder internal rotation    | +z (upper-arm long axis) |
//! | 6     | elbow flexion                 | −y                       |
//! | 7     | forearm pronation             | +z (forearm long axis)   |
//! | 8     | wrist flexion                 | −y                       |
//! | 9     | wrist radial/ulnar deviation  | +x                       |
//!
//! With every joint at zero the torso is upright, the arm hangs straight
//! down and the hand points down. Segments hang along the local −z axis of
//! the frame that follows their proximal joint.

mod config;

pub use config::{HumanModel, DEFAULT_MODEL_TOML};
pub(crate) use config::pose_serde;

use std::f64::consts::FRAC_PI_2;
use std::ops::{Deref, DerefMut};

use nalgebra::{Isometry3, Matrix6xX, SMatrix, SVector, Translation3, Unit, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 10;

pub type JointVector = SVector<f64, NUM_JOINTS>;
pub type Jacobian = SMatrix<f64, 6, NUM_JOINTS>;

pub const TORSO_FLEXION: usize = 0;
pub const TORSO_LATERAL_BEND: usize = 1;
pub const TORSO_AXIAL_ROTATION: usize = 2;
pub const SHOULDER_FLEXION: usize = 3;
pub const SHOULDER_ABDUCTION: usize = 4;
pub const SHOULDER_ROTATION: usize = 5;
pub const ELBOW_FLEXION: usize = 6;
pub const FOREARM_PRONATION: usize = 7;
pub const WRIST_FLEXION: usize = 8;
pub const WRIST_DEVIATION: usize = 9;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "torso_flexion",
    "torso_lateral_bend",
    "torso_axial_rotation",
    "shoulder_flexion",
    "shoulder_abduction",
    "shoulder_internal_rotation",
    "elbow_flexion",
    "forearm_pronation",
    "wrist_flexion",
    "wrist_deviation",
];

const JOINT_AXES: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, -1.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, -1.0, 0.0],
    [1.0, 0.0, 0.0],
];

/// Upper-body joint angles in radians, indexed as in the module table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointPosture(pub JointVector);

impl JointPosture {
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != NUM_JOINTS {
            return Err(Error::DimensionMismatch { expected: NUM_JOINTS, got: values.len() });
        }
        Ok(Self(JointVector::from_column_slice(values)))
    }

    pub fn zeros() -> Self {
        Self(JointVector::zeros())
    }
}

impl Deref for JointPosture {
    type Target = JointVector;
    fn deref(&self) -> &JointVector {
        &self.0
    }
}

impl DerefMut for JointPosture {
    fn deref_mut(&mut self) -> &mut JointVector {
        &mut self.0
    }
}

impl From<JointVector> for JointPosture {
    fn from(v: JointVector) -> Self {
        Self(v)
    }
}

/// Neutral seated posture: everything at zero except a right-angle elbow.
pub fn neutral_posture() -> JointPosture {
    let mut q = JointPosture::zeros();
    q[ELBOW_FLEXION] = FRAC_PI_2;
    q
}

/// Joint angles together with joint rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub q: JointPosture,
    pub qdot: JointVector,
}

impl JointState {
    pub fn at_rest(q: JointPosture) -> Self {
        Self { q, qdot: JointVector::zeros() }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self { position, orientation }
    }

    pub fn identity() -> Self {
        Self { position: Vector3::zeros(), orientation: UnitQuaternion::identity() }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self { position: iso.translation.vector, orientation: iso.rotation }
    }
}

/// Linear velocity stacked over angular velocity, both in the base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Self { linear: Vector3::zeros(), angular: Vector3::zeros() }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            linear: Vector3::new(v[0], v[1], v[2]),
            angular: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        )
    }
}

/// Anthropometric parameters of the chain plus the chair placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentLengths {
    pub torso_length: f64,
    pub shoulder_offset: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub hand: f64,
    /// Chair seat frame expressed in the robot base frame.
    #[serde(with = "config::pose_serde")]
    pub chair_to_robot: Pose,
}

impl SegmentLengths {
    pub fn validate(&self) -> Result<()> {
        let lengths = [
            ("torso_length", self.torso_length),
            ("shoulder_offset", self.shoulder_offset),
            ("upper_arm", self.upper_arm),
            ("forearm", self.forearm),
            ("hand", self.hand),
        ];
        for (name, v) in lengths {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be a positive length, got {v}")));
            }
        }
        let n = self.chair_to_robot.orientation.quaternion().norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("chair orientation is not unit-norm ({n})")));
        }
        Ok(())
    }
}

impl Default for SegmentLengths {
    fn default() -> Self {
        HumanModel::default().segments
    }
}

/// Fixed box limits on the joint angles.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLimits {
    pub q_min: JointVector,
    pub q_max: JointVector,
}

impl JointLimits {
    pub fn new(q_min: JointVector, q_max: JointVector) -> Result<Self> {
        for i in 0..NUM_JOINTS {
            if !(q_min[i] < q_max[i]) {
                return Err(Error::Config(format!(
                    "limit for {} is empty: [{}, {}]",
                    JOINT_NAMES[i], q_min[i], q_max[i]
                )));
            }
        }
        Ok(Self { q_min, q_max })
    }

    pub fn contains(&self, q: &JointPosture) -> bool {
        (0..NUM_JOINTS).all(|i| q[i] >= self.q_min[i] && q[i] <= self.q_max[i])
    }

    pub fn range(&self, joint: usize) -> f64 {
        self.q_max[joint] - self.q_min[joint]
    }

    pub fn midpoint(&self) -> JointVector {
        (self.q_min + self.q_max) * 0.5
    }
}

impl Default for JointLimits {
    fn default() -> Self {
        HumanModel::default().limits
    }
}

/// Validity check hook. The fixed box is the only shipped model; a
/// posture-dependent range-of-motion model plugs in here.
pub trait RangeOfMotion {
    fn is_valid(&self, q: &JointPosture) -> bool;
    fn project(&self, q: &JointPosture) -> JointPosture;
}

impl RangeOfMotion for JointLimits {
    fn is_valid(&self, q: &JointPosture) -> bool {
        self.contains(q)
    }

    fn project(&self, q: &JointPosture) -> JointPosture {
        clamp_to_limits(q, self)
    }
}

pub fn clamp_to_limits(q: &JointPosture, lim: &JointLimits) -> JointPosture {
    JointPosture(q.zip_zip_map(&lim.q_min, &lim.q_max, |v, lo, hi| v.clamp(lo, hi)))
}

/// Per-joint frames produced while walking the chain.
struct ChainFrames {
    /// Joint origins in the base frame.
    origins: [Vector3<f64>; NUM_JOINTS],
    /// Joint axes in the base frame.
    axes: [Vector3<f64>; NUM_JOINTS],
    tip: Isometry3<f64>,
}

fn walk_chain(q: &JointPosture, psi: &SegmentLengths) -> ChainFrames {
    let down = Vector3::new(0.0, 0.0, -1.0);
    // Fixed offsets applied after each joint (in the joint's child frame).
    let offsets: [Vector3<f64>; NUM_JOINTS] = [
        Vector3::zeros(),
        Vector3::zeros(),
        Vector3::new(0.0, -psi.shoulder_offset, psi.torso_length),
        Vector3::zeros(),
        Vector3::zeros(),
        down * psi.upper_arm,
        Vector3::zeros(),
        down * psi.forearm,
        Vector3::zeros(),
        down * psi.hand,
    ];

    let mut frame = psi.chair_to_robot.to_isometry();
    let mut origins = [Vector3::zeros(); NUM_JOINTS];
    let mut axes = [Vector3::zeros(); NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let local_axis = Unit::new_unchecked(Vector3::from(JOINT_AXES[j]));
        origins[j] = frame.translation.vector;
        axes[j] = frame.rotation * local_axis.into_inner();
        let joint = UnitQuaternion::from_axis_angle(&local_axis, q[j]);
        frame = frame * Isometry3::from_parts(Translation3::identity(), joint);
        frame = frame * Translation3::from(offsets[j]);
    }
    ChainFrames { origins, axes, tip: frame }
}

/// Pose of the hand grip point in the robot base frame.
pub fn forward_kinematics(q: &JointPosture, psi: &SegmentLengths) -> Pose {
    let tip = walk_chain(q, psi).tip;
    let mut orientation = tip.rotation;
    orientation.renormalize();
    Pose { position: tip.translation.vector, orientation }
}

/// Geometric Jacobian of the grip point, linear rows over angular rows.
pub fn jacobian(q: &JointPosture, psi: &SegmentLengths) -> Jacobian {
    let frames = walk_chain(q, psi);
    let tip = frames.tip.translation.vector;
    let mut jac = Jacobian::zeros();
    for j in 0..NUM_JOINTS {
        let axis = frames.axes[j];
        let lin = axis.cross(&(tip - frames.origins[j]));
        jac.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
        jac.fixed_view_mut::<3, 1>(3, j).copy_from(&axis);
    }
    jac
}

/// Dynamic-width copy of the Jacobian, handy for stacked least-squares systems.
pub fn jacobian_dyn(q: &JointPosture, psi: &SegmentLengths) -> Matrix6xX<f64> {
    let jac = jacobian(q, psi);
    Matrix6xX::from_column_slice(jac.as_slice())
}

pub fn task_velocity(state: &JointState, psi: &SegmentLengths) -> Twist {
    Twist::from_vector(&(jacobian(&state.q, psi) * state.qdot))
}

/// Constant-velocity update: `q' = q + q̇·dt`, `q̇' = q̇ + q̈·dt`.
///
/// No limit handling; callers clamp.
pub fn motion_update(state: &JointState, qddot: &JointVector, dt: f64) -> Result<JointState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    Ok(JointState {
        q: JointPosture(state.q.0 + state.qdot * dt),
        qdot: state.qdot + qddot * dt,
    })
}

/// Rotation vector of `a · b⁻¹` (base-frame geodesic error).
pub fn orientation_error(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> Vector3<f64> {
    if a == b {
        return Vector3::zeros();
    }
    let mut rel = a * b.inverse();
    // Shortest arc: pick the hemisphere with non-negative scalar part.
    if rel.w < 0.0 {
        rel = UnitQuaternion::new_unchecked(-rel.into_inner());
    }
    rel.scaled_axis()
}

/// Position difference stacked over orientation geodesic error, `a ⊖ b`.
pub fn pose_error(a: &Pose, b: &Pose) -> Vector6<f64> {
    let dp = a.position - b.position;
    let dr = orientation_error(&a.orientation, &b.orientation);
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}
