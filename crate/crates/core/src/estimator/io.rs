//! CSV files for observation streams and estimated trajectories.
//!
//! Observations: `t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz`.
//! Estimates: `t`, the ten joint angles by name, then `<name>_rate` for each.

use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::{check_monotone, Observation, PostureTrajectory};
use crate::error::{Error, Result};
use crate::kinematics::{JointPosture, JointState, JointVector, Pose, Twist, JOINT_NAMES, NUM_JOINTS};

pub const OBSERVATION_HEADER: [&str; 14] =
    ["t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz"];

fn parse_row(rec: &csv::StringRecord, width: usize, line: usize) -> Result<Vec<f64>> {
    if rec.len() != width {
        return Err(Error::Format(format!("line {line}: expected {width} columns, found {}", rec.len())));
    }
    rec.iter()
        .map(|f| f.trim().parse::<f64>().map_err(|_| Error::Format(format!("line {line}: not a number: {f:?}"))))
        .collect()
}

fn check_header(rec: &csv::StringRecord, expected: &[String]) -> Result<()> {
    let found: Vec<&str> = rec.iter().map(str::trim).collect();
    if found != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Format(format!("unexpected header {found:?}, expected {expected:?}")));
    }
    Ok(())
}

pub fn write_observations_csv(path: &Path, obs: &[Observation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(OBSERVATION_HEADER)?;
    for o in obs {
        let q = o.pose.orientation.quaternion();
        let p = o.pose.position;
        let (v, a) = (o.twist.linear, o.twist.angular);
        let row = [o.time, p.x, p.y, p.z, q.w, q.i, q.j, q.k, v.x, v.y, v.z, a.x, a.y, a.z];
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_observations_csv(path: &Path) -> Result<Vec<Observation>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows = r.records();
    let header = rows.next().ok_or_else(|| Error::Format("empty observation file".into()))??;
    check_header(&header, &OBSERVATION_HEADER.map(String::from))?;
    let mut out = Vec::new();
    for (i, rec) in rows.enumerate() {
        let v = parse_row(&rec?, OBSERVATION_HEADER.len(), i + 2)?;
        let quat = Quaternion::new(v[4], v[5], v[6], v[7]);
        if (quat.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::Format(format!("line {}: orientation is not a unit quaternion", i + 2)));
        }
        out.push(Observation {
            time: v[0],
            pose: Pose::new(Vector3::new(v[1], v[2], v[3]), UnitQuaternion::from_quaternion(quat)),
            twist: Twist { linear: Vector3::new(v[8], v[9], v[10]), angular: Vector3::new(v[11], v[12], v[13]) },
        });
    }
    check_monotone(&out.iter().map(|o| o.time).collect::<Vec<_>>()).map_err(|e| Error::Format(e.to_string()))?;
    Ok(out)
}

pub fn estimate_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(JOINT_NAMES.iter().map(|n| n.to_string()));
    h.extend(JOINT_NAMES.iter().map(|n| format!("{n}_rate")));
    h
}

pub fn write_estimate_csv(path: &Path, traj: &PostureTrajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(estimate_header())?;
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let row = std::iter::once(*t).chain(s.q.iter().copied()).chain(s.qdot.iter().copied());
        w.write_record(row.map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_estimate_csv(path: &Path) -> Result<PostureTrajectory> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows = r.records();
    let header = rows.next().ok_or_else(|| Error::Format("empty trajectory file".into()))??;
    let expected = estimate_header();
    check_header(&header, &expected)?;
    let mut traj = PostureTrajectory::default();
    for (i, rec) in rows.enumerate() {
        let v = parse_row(&rec?, expected.len(), i + 2)?;
        let q = JointVector::from_column_slice(&v[1..1 + NUM_JOINTS]);
        let qdot = JointVector::from_column_slice(&v[1 + NUM_JOINTS..]);
        traj.push(v[0], JointState { q: JointPosture(q), qdot }).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(traj)
}
