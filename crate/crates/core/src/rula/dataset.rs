//! RULA-labeled posture datasets: sampling, class balancing and file formats.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic   8 bytes  "RULADSET"
//! version u32
//! count   u64
//! record  58 bytes, repeated `count` times:
//!         10 x f32  joint angles (rad)
//!         f32       neck angle (rad)
//!         u8        load category code (0..=3)
//!         11 x u8   context flags, order of TaskContext::FLAG_NAMES
//!         u8        label (1..=7)
//! ```
//!
//! Angles are rounded to `f32` before labeling so that a stored record
//! relabels to the same score after a round trip.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng as _, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{grand_score, LoadCategory, TaskContext};
use crate::error::{Error, Result};
use crate::kinematics::{neutral_posture, JointLimits, JointPosture, JointVector, JOINT_NAMES, NUM_JOINTS};
use crate::rng;

pub const DATASET_MAGIC: &[u8; 8] = b"RULADSET";
pub const DATASET_VERSION: u32 = 1;
const RECORD_BYTES: usize = 4 * NUM_JOINTS + 4 + 1 + 11 + 1;
const CHUNK_RECORDS: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPosture {
    pub q: JointPosture,
    pub ctx: TaskContext,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PostureDataset {
    pub records: Vec<LabeledPosture>,
    /// `class_counts[k]` counts label `k + 1`.
    pub class_counts: [usize; 7],
}

impl PostureDataset {
    pub fn from_records(records: Vec<LabeledPosture>) -> Self {
        let mut class_counts = [0; 7];
        for r in &records {
            class_counts[r.label as usize - 1] += 1;
        }
        Self { records, class_counts }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self::from_records(indices.iter().map(|&i| self.records[i]).collect())
    }
}

/// Where task contexts come from during generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CtxSampler {
    /// The same context for every record.
    Fixed { ctx: TaskContext },
    /// Every field drawn independently: load uniform over the four
    /// categories, flags fair coins, neck angle uniform in `neck_range`.
    Varied { neck_range: [f64; 2] },
}

impl Default for CtxSampler {
    fn default() -> Self {
        Self::Varied { neck_range: [-10f64.to_radians(), 30f64.to_radians()] }
    }
}

impl CtxSampler {
    pub fn sample<R: RngCore>(&self, rng: &mut R) -> TaskContext {
        match *self {
            Self::Fixed { ctx } => ctx,
            Self::Varied { neck_range: [lo, hi] } => {
                let load = LoadCategory::ALL[rng.random_range(0..4)];
                let neck = to_f32_precision(rng.random_range(lo..=hi));
                let flags: [bool; 11] = std::array::from_fn(|_| rng.random_bool(0.5));
                TaskContext::from_flags(load, neck, &flags)
            }
        }
    }

    /// Draw skewed toward low-risk contexts, used while balancing. A risk
    /// level `r ~ U(0, 1)` sets the probability of each risky field value.
    /// Fixed samplers are returned unchanged.
    fn sample_low_risk<R: RngCore>(&self, rng: &mut R) -> TaskContext {
        match *self {
            Self::Fixed { ctx } => ctx,
            Self::Varied { neck_range: [lo, hi] } => {
                let r: f64 = rng.random();
                let load = if rng.random_bool(r) { LoadCategory::ALL[rng.random_range(0..4)] } else { LoadCategory::None };
                let neck_lo = lo.max(0.0);
                let neck_hi = hi.min(10f64.to_radians()).max(neck_lo);
                let neck = if rng.random_bool(r) { rng.random_range(lo..=hi) } else { rng.random_range(neck_lo..=neck_hi) };
                let mut flags: [bool; 11] = std::array::from_fn(|_| rng.random_bool(r));
                // Support flags lower the score when set.
                for i in [3, 4, 5] {
                    flags[i] = !flags[i];
                }
                TaskContext::from_flags(load, to_f32_precision(neck), &flags)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n: usize,
    pub balance: bool,
    pub ctx_sampler: CtxSampler,
    pub seed: u64,
    /// Attempts allowed per requested record before a balanced run gives up.
    pub max_attempts_per_record: u64,
}

impl DatasetConfig {
    pub fn new(n: usize, balance: bool, seed: u64) -> Self {
        Self { n, balance, ctx_sampler: CtxSampler::default(), seed, max_attempts_per_record: 5_000 }
    }

    /// Desk-scale preset: 200k balanced records in the seated neutral context.
    pub fn desk(seed: u64) -> Self {
        Self { ctx_sampler: CtxSampler::Fixed { ctx: TaskContext::seated_neutral() }, ..Self::new(200_000, true, seed) }
    }
}

fn to_f32_precision(v: f64) -> f64 {
    v as f32 as f64
}

/// Uniform draw within the box, rounded to `f32` precision.
pub fn sample_posture<R: RngCore>(rng: &mut R, lim: &JointLimits) -> JointPosture {
    JointPosture(JointVector::from_fn(|i, _| {
        let v = rng.random_range(lim.q_min[i]..=lim.q_max[i]);
        to_f32_precision(v)
    }))
}

/// Proposal used while balancing: uniform over the limits half of the time,
/// otherwise uniform in a shrunken box around the neutral posture, where the
/// low-risk classes live.
fn sample_balancing_proposal<R: RngCore>(rng: &mut R, lim: &JointLimits) -> JointPosture {
    const SHRINK: [f64; 3] = [0.04, 0.12, 0.3];
    if rng.random_bool(0.5) {
        return sample_posture(rng, lim);
    }
    let scale = SHRINK[rng.random_range(0..SHRINK.len())];
    let center = neutral_posture();
    JointPosture(JointVector::from_fn(|i, _| {
        let half = scale * lim.range(i);
        let lo = (center[i] - half).max(lim.q_min[i]);
        let hi = (center[i] + half).min(lim.q_max[i]);
        to_f32_precision(rng.random_range(lo..=hi))
    }))
}

fn label_record(q: JointPosture, ctx: TaskContext) -> LabeledPosture {
    LabeledPosture { q, ctx, label: grand_score(&q, &ctx) }
}

/// Splits `total` into `parts` near-equal consecutive shares.
fn split_evenly(total: usize, parts: usize, index: usize) -> usize {
    total * (index + 1) / parts - total * index / parts
}

/// Generates `cfg.n` labeled postures.
///
/// With balancing, each label receives `n / 7` records (the remainder goes to
/// the lowest labels), which satisfies the at-least-`n / 14` guarantee with
/// margin. Work is split into fixed chunks with independent random streams
/// and concatenated in chunk order, so the output is schedule independent.
pub fn generate_dataset(cfg: &DatasetConfig, lim: &JointLimits) -> Result<PostureDataset> {
    if cfg.n == 0 {
        return Err(Error::InvalidArgument("dataset size must be positive".into()));
    }
    let chunks = cfg.n.div_ceil(CHUNK_RECORDS);
    let results: Vec<Result<Vec<LabeledPosture>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(cfg.seed, 0xDA7A, c as u64);
            if cfg.balance {
                let quota: [usize; 7] = std::array::from_fn(|k| {
                    let per_class = cfg.n / 7 + usize::from(k < cfg.n % 7);
                    split_evenly(per_class, chunks, c)
                });
                generate_balanced_chunk(&mut rng, cfg, lim, quota)
            } else {
                let len = split_evenly(cfg.n, chunks, c);
                Ok((0..len)
                    .map(|_| {
                        let q = sample_posture(&mut rng, lim);
                        let ctx = cfg.ctx_sampler.sample(&mut rng);
                        label_record(q, ctx)
                    })
                    .collect())
            }
        })
        .collect();
    let mut records = Vec::with_capacity(cfg.n);
    for r in results {
        records.extend(r?);
    }
    Ok(PostureDataset::from_records(records))
}

fn generate_balanced_chunk(
    rng: &mut rng::Rng,
    cfg: &DatasetConfig,
    lim: &JointLimits,
    quota: [usize; 7],
) -> Result<Vec<LabeledPosture>> {
    let wanted: usize = quota.iter().sum();
    let mut counts = [0usize; 7];
    let mut out = Vec::with_capacity(wanted);
    let max_attempts = cfg.max_attempts_per_record.saturating_mul(wanted.max(1) as u64);
    let mut attempts = 0u64;
    while out.len() < wanted {
        if attempts >= max_attempts {
            return Err(Error::Unbalanced { attempts, histogram: counts });
        }
        attempts += 1;
        let q = sample_balancing_proposal(rng, lim);
        let ctx = if rng.random_bool(0.5) { cfg.ctx_sampler.sample(rng) } else { cfg.ctx_sampler.sample_low_risk(rng) };
        let rec = label_record(q, ctx);
        let k = rec.label as usize - 1;
        if counts[k] < quota[k] {
            counts[k] += 1;
            out.push(rec);
        }
    }
    Ok(out)
}

fn encode_record(r: &LabeledPosture, buf: &mut Vec<u8>) {
    for v in r.q.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    buf.extend_from_slice(&(r.ctx.neck_angle as f32).to_le_bytes());
    buf.push(r.ctx.load_category as u8);
    buf.extend(r.ctx.flags().iter().map(|&f| u8::from(f)));
    buf.push(r.label);
}

fn decode_record(bytes: &[u8]) -> Result<LabeledPosture> {
    let f32_at = |i: usize| f32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as f64;
    let q = JointPosture(JointVector::from_fn(|i, _| f32_at(i)));
    let neck = f32_at(NUM_JOINTS);
    let base = 4 * NUM_JOINTS + 4;
    let load = LoadCategory::from_code(bytes[base])?;
    let mut flags = [false; 11];
    for (i, f) in flags.iter_mut().enumerate() {
        *f = match bytes[base + 1 + i] {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("invalid boolean byte {b}"))),
        };
    }
    let label = bytes[base + 12];
    if !(1..=7).contains(&label) {
        return Err(Error::Format(format!("invalid label {label}")));
    }
    Ok(LabeledPosture { q, ctx: TaskContext::from_flags(load, neck, &flags), label })
}

pub fn write_dataset(path: &Path, ds: &PostureDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(ds.records.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(RECORD_BYTES);
    for r in &ds.records {
        buf.clear();
        encode_record(r, &mut buf);
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<PostureDataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::Format("file too short for header".into()))?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format("not a posture dataset (bad magic)".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| Error::Format("file too short for header".into()))?;
    let version = u32::from_le_bytes(word);
    if version != DATASET_VERSION {
        return Err(Error::Version { found: version, supported: DATASET_VERSION });
    }
    let mut count = [0u8; 8];
    r.read_exact(&mut count).map_err(|_| Error::Format("file too short for header".into()))?;
    let count = u64::from_le_bytes(count) as usize;
    let mut records = Vec::with_capacity(count.min(1 << 24));
    let mut buf = [0u8; RECORD_BYTES];
    for i in 0..count {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Format(format!("truncated dataset: {i} of {count} records present")))?;
        records.push(decode_record(&buf)?);
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after last record".into()));
    }
    Ok(PostureDataset::from_records(records))
}

fn csv_header() -> Vec<String> {
    let mut h: Vec<String> = JOINT_NAMES.iter().map(|s| s.to_string()).collect();
    h.push("neck_angle".into());
    h.push("load_category".into());
    h.extend(TaskContext::FLAG_NAMES.iter().map(|s| s.to_string()));
    h.push("label".into());
    h
}

/// Text mirror of the binary format, same column order.
pub fn write_dataset_csv(path: &Path, ds: &PostureDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(csv_header())?;
    for r in &ds.records {
        let mut row: Vec<String> = r.q.iter().map(|v| format!("{}", *v as f32)).collect();
        row.push(format!("{}", r.ctx.neck_angle as f32));
        row.push((r.ctx.load_category as u8).to_string());
        row.extend(r.ctx.flags().iter().map(|&f| u8::from(f).to_string()));
        row.push(r.label.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv(path: &Path) -> Result<PostureDataset> {
    let mut rd = csv::Reader::from_path(path)?;
    let expected = csv_header();
    if rd.headers()?.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Format("unexpected dataset CSV header".into()));
    }
    let mut records = Vec::new();
    for row in rd.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row[i].parse::<f32>().map(f64::from).map_err(|e| Error::Format(format!("column {i}: {e}")))
        };
        let int = |i: usize| -> Result<u8> { row[i].parse::<u8>().map_err(|e| Error::Format(format!("column {i}: {e}"))) };
        let q = JointPosture(JointVector::from_iterator((0..NUM_JOINTS).map(|i| num(i).unwrap_or(f64::NAN))));
        if q.iter().any(|v| v.is_nan()) {
            return Err(Error::Format("non-numeric joint angle".into()));
        }
        let neck = num(NUM_JOINTS)?;
        let load = LoadCategory::from_code(int(NUM_JOINTS + 1)?)?;
        let mut flags = [false; 11];
        for (i, f) in flags.iter_mut().enumerate() {
            *f = int(NUM_JOINTS + 2 + i)? != 0;
        }
        let label = int(NUM_JOINTS + 13)?;
        if !(1..=7).contains(&label) {
            return Err(Error::Format(format!("invalid label {label}")));
        }
        records.push(LabeledPosture { q, ctx: TaskContext::from_flags(load, neck, &flags), label });
    }
    Ok(PostureDataset::from_records(records))
}
