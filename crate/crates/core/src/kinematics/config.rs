//! Anthropometry and joint-limit configuration (TOML, meters and radians).

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{JointLimits, JointVector, SegmentLengths, JOINT_NAMES, NUM_JOINTS};
use crate::error::{Error, Result};

/// The shipped default model.
pub const DEFAULT_MODEL_TOML: &str = include_str!("../../../../config/human.toml");

/// Segment lengths and joint limits of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanModel {
    pub segments: SegmentLengths,
    pub limits: JointLimits,
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    segments: SegmentLengths,
    limits: BTreeMap<String, [f64; 2]>,
}

impl HumanModel {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawModel = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        raw.segments.validate()?;
        let mut q_min = JointVector::zeros();
        let mut q_max = JointVector::zeros();
        for (i, name) in JOINT_NAMES.iter().enumerate() {
            let [lo, hi] = raw
                .limits
                .get(*name)
                .ok_or_else(|| Error::Config(format!("missing limit for {name}")))?;
            q_min[i] = *lo;
            q_max[i] = *hi;
        }
        if let Some(extra) = raw.limits.keys().find(|k| !JOINT_NAMES.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown joint {extra}")));
        }
        Ok(Self { segments: raw.segments, limits: JointLimits::new(q_min, q_max)? })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        let limits = (0..NUM_JOINTS)
            .map(|i| (JOINT_NAMES[i].to_string(), [self.limits.q_min[i], self.limits.q_max[i]]))
            .collect();
        let raw = RawModel { segments: self.segments.clone(), limits };
        toml::to_string(&raw).expect("model serializes")
    }
}

impl Default for HumanModel {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_MODEL_TOML).expect("shipped model config is valid")
    }
}

pub(crate) mod pose_serde {
    use super::*;
    use crate::kinematics::Pose;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct RawPose {
        position: [f64; 3],
        /// w, x, y, z
        orientation: [f64; 4],
    }

    pub fn serialize<S: Serializer>(pose: &Pose, s: S) -> std::result::Result<S::Ok, S::Error> {
        let q = pose.orientation.quaternion();
        RawPose {
            position: [pose.position.x, pose.position.y, pose.position.z],
            orientation: [q.w, q.i, q.j, q.k],
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Pose, D::Error> {
        let raw = RawPose::deserialize(d)?;
        let [w, x, y, z] = raw.orientation;
        let quat = Quaternion::new(w, x, y, z);
        if (quat.norm() - 1.0).abs() > 1e-6 {
            return Err(serde::de::Error::custom("orientation quaternion must be unit-norm"));
        }
        Ok(Pose {
            position: Vector3::from(raw.position),
            orientation: UnitQuaternion::from_quaternion(quat),
        })
    }
}
