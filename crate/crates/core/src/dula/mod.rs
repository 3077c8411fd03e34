//! DULA: a differentiable surrogate of the RULA grand score.
//!
//! A fully connected regression network (`D_in → 124 → 124 → 124 → 7 → 1`,
//! ReLU hidden layers, linear head) maps an encoded posture and task context
//! to a real-valued risk score. Rounding the output to the nearest integer
//! recovers the RULA class; the raw output is what optimizers minimize.
//!
//! Weights are stored as `f32`. Single-sample inference and input gradients
//! accumulate in `f64` so that finite-difference checks and line searches see
//! a clean piecewise-linear function.

mod io;
mod train;

pub use io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use train::{evaluate, kfold_cv, train, EvalReport, OptimizerKind, TrainConfig, TrainOutcome};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{JointLimits, JointPosture, NUM_JOINTS};
use crate::rng;
use crate::rula::TaskContext;

/// Hidden layer widths.
pub const HIDDEN_DIMS: [usize; 4] = [124, 124, 124, 7];
pub const CONTEXT_FEATURES: usize = 8;

/// Which inputs the network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputVariant {
    /// Ten joint angles plus eight task-context features.
    #[default]
    PostureAndContext,
    /// Ten joint angles only; the task context is fixed at training time.
    PostureOnly,
}

impl InputVariant {
    pub fn input_dim(self) -> usize {
        match self {
            Self::PostureAndContext => NUM_JOINTS + CONTEXT_FEATURES,
            Self::PostureOnly => NUM_JOINTS,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Self::PostureAndContext => 0,
            Self::PostureOnly => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Self::PostureAndContext),
            1 => Ok(Self::PostureOnly),
            _ => Err(Error::Format(format!("unknown input variant {code}"))),
        }
    }
}

/// Affine map of raw features to roughly `[-1, 1]`: `(x - center) / half_range`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputEncoder {
    pub variant: InputVariant,
    /// One `(center, half_range)` pair per input feature.
    pub normalization: Vec<(f32, f32)>,
}

/// Neck angles are normalized over this band (radians).
pub const NECK_RANGE: [f64; 2] = [-0.17453292519943295, 0.5235987755982988];

impl InputEncoder {
    pub fn new(variant: InputVariant, limits: &JointLimits) -> Self {
        let mut normalization: Vec<(f32, f32)> = (0..NUM_JOINTS)
            .map(|i| (limits.midpoint()[i] as f32, (limits.range(i) / 2.0) as f32))
            .collect();
        if variant == InputVariant::PostureAndContext {
            let neck_center = (NECK_RANGE[0] + NECK_RANGE[1]) / 2.0;
            let neck_half = (NECK_RANGE[1] - NECK_RANGE[0]) / 2.0;
            normalization.push((0.0, 1.0));
            normalization.push((neck_center as f32, neck_half as f32));
            normalization.extend(std::iter::repeat_n((0.0, 1.0), CONTEXT_FEATURES - 2));
        }
        Self { variant, normalization }
    }

    pub fn input_dim(&self) -> usize {
        self.normalization.len()
    }

    /// Raw context features before normalization. Pairs and triples of flags
    /// share one feature through binary weights, which keeps the encoding
    /// injective.
    pub fn raw_context(ctx: &TaskContext) -> [f64; CONTEXT_FEATURES] {
        let b = |v: bool| f64::from(u8::from(v));
        [
            ctx.load_category.score() as f64 / 3.0,
            ctx.neck_angle,
            (b(ctx.static_muscle_use) + 2.0 * b(ctx.repetition)) / 3.0,
            b(ctx.neck_twist_or_side_bend),
            (b(ctx.trunk_supported) + 2.0 * b(ctx.legs_supported)) / 3.0,
            (b(ctx.shoulder_raised) + 2.0 * b(ctx.arm_abducted_flag)) / 3.0,
            b(ctx.arm_supported),
            (b(ctx.working_across_midline) + 2.0 * b(ctx.wrist_bent_from_midline) + 4.0 * b(ctx.wrist_twist_extreme))
                / 7.0,
        ]
    }

    pub fn encode(&self, q: &JointPosture, ctx: &TaskContext) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.input_dim());
        x.extend(q.iter().copied());
        if self.variant == InputVariant::PostureAndContext {
            x.extend(Self::raw_context(ctx));
        }
        for (v, &(c, h)) in x.iter_mut().zip(&self.normalization) {
            *v = (*v - c as f64) / h as f64;
        }
        x
    }

    /// `d(encoded_i)/d(q_i)` for the joint features.
    pub fn joint_scale(&self) -> [f64; NUM_JOINTS] {
        std::array::from_fn(|i| 1.0 / self.normalization[i].1 as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.normalization.len() != self.variant.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.variant.input_dim(), got: self.normalization.len() });
        }
        if let Some((i, _)) = self.normalization.iter().enumerate().find(|(_, (c, h))| !(*h > 0.0) || !c.is_finite()) {
            return Err(Error::Format(format!("normalization entry {i} has non-positive half range")));
        }
        Ok(())
    }
}

/// Dense layer, weights row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], biases: vec![0.0; outputs] }
    }

    fn row(&self, o: usize) -> &[f32] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub encoder: InputEncoder,
    pub layers: Vec<Layer>,
}

impl MlpModel {
    /// Network with the fixed DULA topology and all-zero parameters.
    pub fn zeros(encoder: InputEncoder) -> Self {
        let dims = Self::dims_for(encoder.input_dim());
        let layers = dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Self { encoder, layers }
    }

    fn dims_for(input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(HIDDEN_DIMS);
        dims.push(1);
        dims
    }

    /// Uniform initialization in `±sqrt(6 / fan_in)`, zero biases, output
    /// bias at the mid-scale label 4.
    pub fn initialized(encoder: InputEncoder, seed: u64) -> Self {
        let mut model = Self::zeros(encoder);
        let mut rng = rng::stream(seed, 0x1417, 0);
        for layer in &mut model.layers {
            let bound = (6.0 / layer.inputs as f64).sqrt() as f32;
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
        }
        if let Some(last) = model.layers.last_mut() {
            last.biases[0] = 4.0;
        }
        model
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let expected = Self::dims_for(self.input_dim());
        let dims = self.layer_dims();
        if dims != expected {
            return Err(Error::Format(format!("layer dimensions {dims:?} differ from {expected:?}")));
        }
        for (l, w) in self.layers.iter().zip(dims.windows(2)) {
            if l.inputs != w[0] || l.weights.len() != w[0] * w[1] || l.biases.len() != w[1] {
                return Err(Error::Format("inconsistent layer storage".into()));
            }
        }
        Ok(())
    }

    pub fn encode(&self, q: &JointPosture, ctx: &TaskContext) -> Vec<f64> {
        self.encoder.encode(q, ctx)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    /// Pre-activations of every layer for one input.
    fn pre_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut act: Vec<f64> = x.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let z: Vec<f64> = (0..layer.outputs)
                .map(|o| {
                    let row = layer.row(o);
                    row.iter().zip(&act).fold(layer.biases[o] as f64, |s, (&w, &a)| s + w as f64 * a)
                })
                .collect();
            act = if li + 1 < self.layers.len() { z.iter().map(|v| v.max(0.0)).collect() } else { z.clone() };
            out.push(z);
        }
        out
    }

    /// Network output for an encoded input.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.pre_activations(x).last().expect("at least one layer")[0])
    }

    /// Exact reverse-mode gradient of [`forward`](Self::forward) with
    /// respect to the encoded input; ReLU derivative is 0 at the kink.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let pre = self.pre_activations(x);
        let mut grad = vec![1.0f64];
        for (li, layer) in self.layers.iter().enumerate().rev() {
            if li + 1 < self.layers.len() {
                for (g, z) in grad.iter_mut().zip(&pre[li]) {
                    if *z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let mut next = vec![0.0f64; layer.inputs];
            for (o, g) in grad.iter().enumerate() {
                if *g == 0.0 {
                    continue;
                }
                for (n, &w) in next.iter_mut().zip(layer.row(o)) {
                    *n += g * w as f64;
                }
            }
            grad = next;
        }
        Ok(grad)
    }

    /// Score of a posture under a task context.
    pub fn score(&self, q: &JointPosture, ctx: &TaskContext) -> f64 {
        self.pre_activations(&self.encode(q, ctx)).last().expect("at least one layer")[0]
    }

    /// Score and its gradient with respect to the joint angles.
    pub fn score_and_joint_gradient(&self, q: &JointPosture, ctx: &TaskContext) -> (f64, [f64; NUM_JOINTS]) {
        let x = self.encode(q, ctx);
        let value = self.forward(&x).expect("encoder matches model");
        let gx = self.input_gradient(&x).expect("encoder matches model");
        let scale = self.encoder.joint_scale();
        (value, std::array::from_fn(|i| gx[i] * scale[i]))
    }

    /// Signs of all hidden pre-activations; equal patterns mean the inputs
    /// lie in the same linear region.
    pub fn activation_pattern(&self, x: &[f64]) -> Vec<bool> {
        let pre = self.pre_activations(x);
        pre[..pre.len() - 1].iter().flatten().map(|&z| z > 0.0).collect()
    }

    /// Product of layer spectral-norm bounds (Frobenius), a Lipschitz
    /// constant of the network in the encoded input space.
    pub fn lipschitz_bound(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.iter().map(|&w| (w as f64).powi(2)).sum::<f64>().sqrt())
            .product()
    }
}

/// Rounded class of a raw output, clamped to the RULA range.
pub fn round_to_class(output: f64) -> u8 {
    output.round().clamp(1.0, 7.0) as u8
}
