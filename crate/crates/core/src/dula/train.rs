//! Minibatch training, held-out evaluation and k-fold cross-validation.

use matrixmultiply::sgemm;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{round_to_class, InputEncoder, InputVariant, MlpModel};
use crate::error::{Error, Result};
use crate::kinematics::JointLimits;
use crate::rng;
use crate::rula::PostureDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    AdaptiveMoments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub folds: usize,
    /// Fraction held out for the report.
    pub test_fraction: f64,
    /// Cosine-anneal the learning rate to zero over the run.
    pub cosine_decay: bool,
    pub input: InputVariant,
    /// Refuse datasets that miss any of the seven labels.
    pub require_all_classes: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            learning_rate: 1e-3,
            batch_size: 1024,
            optimizer: OptimizerKind::AdaptiveMoments,
            seed: 0,
            folds: 5,
            test_fraction: 0.2,
            cosine_decay: false,
            input: InputVariant::PostureAndContext,
            require_all_classes: true,
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset: 200 epochs of small batches with a cosine-annealed rate.
    pub fn desk() -> Self {
        Self { epochs: 200, learning_rate: 3e-3, batch_size: 256, cosine_decay: true, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.folds == 0 {
            return Err(Error::InvalidArgument("epochs, batch size and folds must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidArgument("test fraction must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Held-out classification quality of rounded outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rounded_accuracy: f64,
    /// `confusion[true - 1][predicted - 1]`.
    pub confusion: [[u64; 7]; 7],
    /// Recall per true label; NaN for labels absent from the test set.
    pub per_class_diagonal: [f64; 7],
    pub mse: f64,
}

impl EvalReport {
    /// Smallest recall over labels present in the test set.
    pub fn lowest_diagonal(&self) -> f64 {
        self.per_class_diagonal.iter().copied().filter(|v| !v.is_nan()).fold(f64::INFINITY, f64::min)
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "rounded accuracy: {:.4}", self.rounded_accuracy)?;
        writeln!(f, "mse: {:.6}", self.mse)?;
        writeln!(f, "lowest confusion diagonal: {:.4}", self.lowest_diagonal())?;
        writeln!(f, "confusion (rows true 1..7, columns predicted 1..7):")?;
        for (k, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>8}")).collect();
            writeln!(f, "  {} |{}   recall {:.4}", k + 1, cells.join(""), self.per_class_diagonal[k])?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub report: EvalReport,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Seeded shuffle split into (train, test).
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, 0x5917, 0));
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let test = idx.split_off(n - n_test.min(n));
    (idx, test)
}

/// Seeded partition of `0..n` into `folds` disjoint, near-equal parts.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::InvalidArgument("cross-validation needs at least two folds".into()));
    }
    if folds > n {
        return Err(Error::InvalidArgument(format!("{folds} folds exceed {n} records")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, 0xF01D, 0));
    Ok((0..folds).map(|f| idx[n * f / folds..n * (f + 1) / folds].to_vec()).collect())
}

struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

fn encode_rows(model: &MlpModel, ds: &PostureDataset, indices: &[usize]) -> (Matrix, Vec<f32>) {
    let cols = model.input_dim();
    let mut data = Vec::with_capacity(indices.len() * cols);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let r = &ds.records[i];
        data.extend(model.encode(&r.q, &r.ctx).iter().map(|&v| v as f32));
        labels.push(r.label as f32);
    }
    (Matrix { rows: indices.len(), cols, data }, labels)
}

/// `c = a · bᵀ` with `a: m×k`, `b: n×k`, all row-major.
fn matmul_a_bt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    unsafe {
        sgemm(m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), 1, k as isize, 0.0, c.as_mut_ptr(), n as isize, 1);
    }
}

/// `c = aᵀ · b` with `a: k×m`, `b: k×n`.
fn matmul_at_b(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    unsafe {
        sgemm(m, k, n, 1.0, a.as_ptr(), 1, m as isize, b.as_ptr(), n as isize, 1, 0.0, c.as_mut_ptr(), n as isize, 1);
    }
}

/// `c = a · b` with `a: m×k`, `b: k×n`.
fn matmul_a_b(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    unsafe {
        sgemm(m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 0.0, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Scratch buffers for one minibatch.
struct Workspace {
    /// Post-activation outputs per layer (index 0 is the input batch).
    acts: Vec<Vec<f32>>,
    grads_w: Vec<Vec<f32>>,
    grads_b: Vec<Vec<f32>>,
    delta: Vec<f32>,
    delta_prev: Vec<f32>,
}

impl Workspace {
    fn new(model: &MlpModel, batch: usize) -> Self {
        let dims = model.layer_dims();
        Self {
            acts: dims.iter().map(|&d| vec![0.0; batch * d]).collect(),
            grads_w: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            grads_b: model.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
            delta: vec![0.0; batch * dims.iter().max().copied().unwrap_or(1)],
            delta_prev: vec![0.0; batch * dims.iter().max().copied().unwrap_or(1)],
        }
    }
}

fn forward_batch(model: &MlpModel, ws: &mut Workspace, rows: usize) {
    let n_layers = model.layers.len();
    for (li, layer) in model.layers.iter().enumerate() {
        let (head, tail) = ws.acts.split_at_mut(li + 1);
        let input = &head[li][..rows * layer.inputs];
        let out = &mut tail[0][..rows * layer.outputs];
        matmul_a_bt(rows, layer.inputs, layer.outputs, input, &layer.weights, out);
        for row in out.chunks_exact_mut(layer.outputs) {
            for (v, b) in row.iter_mut().zip(&layer.biases) {
                *v += b;
                if li + 1 < n_layers && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
}

/// Accumulates parameter gradients of the mean squared error; returns the
/// summed squared error of the batch.
fn backward_batch(model: &MlpModel, ws: &mut Workspace, labels: &[f32]) -> f64 {
    let rows = labels.len();
    let n_layers = model.layers.len();
    let output = &ws.acts[n_layers][..rows];
    let mut sse = 0.0f64;
    let scale = 2.0 / rows as f32;
    for (d, (&y_hat, &y)) in ws.delta.iter_mut().zip(output.iter().zip(labels)) {
        let e = y_hat - y;
        sse += (e as f64) * (e as f64);
        *d = scale * e;
    }
    for li in (0..n_layers).rev() {
        let layer = &model.layers[li];
        let delta = &ws.delta[..rows * layer.outputs];
        let input = &ws.acts[li][..rows * layer.inputs];
        matmul_at_b(layer.outputs, rows, layer.inputs, delta, input, &mut ws.grads_w[li]);
        let gb = &mut ws.grads_b[li];
        gb.iter_mut().for_each(|g| *g = 0.0);
        for row in delta.chunks_exact(layer.outputs) {
            for (g, d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        if li > 0 {
            let prev = &mut ws.delta_prev[..rows * layer.inputs];
            matmul_a_b(rows, layer.outputs, layer.inputs, delta, &layer.weights, prev);
            // ReLU mask from the stored post-activations of the layer below.
            for (d, &a) in prev.iter_mut().zip(input) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }
    }
    sse
}

struct ParamState {
    m: Vec<f32>,
    v: Vec<f32>,
}

struct Optimizer {
    kind: OptimizerKind,
    states: Vec<ParamState>,
    step: i32,
}

impl Optimizer {
    const BETA1: f32 = 0.9;
    const BETA2: f32 = 0.999;
    const EPS: f32 = 1e-8;
    const MOMENTUM: f32 = 0.9;

    fn new(kind: OptimizerKind, model: &MlpModel) -> Self {
        let states = model
            .layers
            .iter()
            .flat_map(|l| [l.weights.len(), l.biases.len()])
            .map(|n| ParamState { m: vec![0.0; n], v: vec![0.0; n] })
            .collect();
        Self { kind, states, step: 0 }
    }

    fn apply(&mut self, model: &mut MlpModel, ws: &Workspace, lr: f32) {
        self.step += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.step);
        let bc2 = 1.0 - Self::BETA2.powi(self.step);
        let mut s = 0;
        for (li, layer) in model.layers.iter_mut().enumerate() {
            for (params, grads) in [(&mut layer.weights, &ws.grads_w[li]), (&mut layer.biases, &ws.grads_b[li])] {
                let st = &mut self.states[s];
                s += 1;
                match self.kind {
                    OptimizerKind::AdaptiveMoments => {
                        for i in 0..params.len() {
                            let g = grads[i];
                            st.m[i] = Self::BETA1 * st.m[i] + (1.0 - Self::BETA1) * g;
                            st.v[i] = Self::BETA2 * st.v[i] + (1.0 - Self::BETA2) * g * g;
                            let m_hat = st.m[i] / bc1;
                            let v_hat = st.v[i] / bc2;
                            params[i] -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
                        }
                    }
                    OptimizerKind::SgdMomentum => {
                        for i in 0..params.len() {
                            st.m[i] = Self::MOMENTUM * st.m[i] + grads[i];
                            params[i] -= lr * st.m[i];
                        }
                    }
                }
            }
        }
    }
}

fn check_dataset(ds: &PostureDataset, cfg: &TrainConfig) -> Result<()> {
    if ds.len() < 2 {
        return Err(Error::InvalidArgument("training needs at least two records".into()));
    }
    if cfg.require_all_classes {
        if let Some(k) = ds.class_counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidArgument(format!(
                "dataset has no records with label {}; histogram {:?}",
                k + 1,
                ds.class_counts
            )));
        }
    }
    Ok(())
}

fn fit(model: &mut MlpModel, ds: &PostureDataset, train_idx: &[usize], cfg: &TrainConfig) -> Result<Vec<f64>> {
    let (x, y) = encode_rows(model, ds, train_idx);
    let batch = cfg.batch_size.min(x.rows).max(1);
    let mut ws = Workspace::new(model, batch);
    let mut opt = Optimizer::new(cfg.optimizer, model);
    let mut order: Vec<usize> = (0..x.rows).collect();
    let mut shuffle_rng = rng::stream(cfg.seed, 0x5EED, 1);
    let mut batch_labels = vec![0.0f32; batch];
    let steps_per_epoch = x.rows.div_ceil(batch);
    let total_steps = (steps_per_epoch * cfg.epochs) as f64;
    let mut step = 0usize;
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sse = 0.0;
        for chunk in order.chunks(batch) {
            let rows = chunk.len();
            let input = &mut ws.acts[0];
            for (r, &i) in chunk.iter().enumerate() {
                input[r * x.cols..(r + 1) * x.cols].copy_from_slice(&x.data[i * x.cols..(i + 1) * x.cols]);
                batch_labels[r] = y[i];
            }
            forward_batch(model, &mut ws, rows);
            sse += backward_batch(model, &mut ws, &batch_labels[..rows]);
            let lr = if cfg.cosine_decay {
                0.5 * cfg.learning_rate * (1.0 + (std::f64::consts::PI * step as f64 / total_steps).cos())
            } else {
                cfg.learning_rate
            };
            opt.apply(model, &ws, lr as f32);
            step += 1;
        }
        let loss = sse / x.rows as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        log::debug!("epoch {epoch}: train mse {loss:.6}");
        trace.push(loss);
    }
    Ok(trace)
}

/// Batched predictions for a set of records.
fn predict(model: &MlpModel, ds: &PostureDataset, indices: &[usize]) -> Vec<f32> {
    const BATCH: usize = 4096;
    let mut out = Vec::with_capacity(indices.len());
    let mut ws = Workspace::new(model, BATCH.min(indices.len()).max(1));
    for chunk in indices.chunks(BATCH) {
        let (x, _) = encode_rows(model, ds, chunk);
        ws.acts[0][..x.data.len()].copy_from_slice(&x.data);
        forward_batch(model, &mut ws, chunk.len());
        out.extend_from_slice(&ws.acts[model.layers.len()][..chunk.len()]);
    }
    out
}

/// Rounded-output evaluation of `model` on the records at `indices`.
pub fn evaluate(model: &MlpModel, ds: &PostureDataset, indices: &[usize]) -> EvalReport {
    let preds = predict(model, ds, indices);
    let mut confusion = [[0u64; 7]; 7];
    let mut sse = 0.0;
    for (&i, &p) in indices.iter().zip(&preds) {
        let label = ds.records[i].label;
        let e = p as f64 - label as f64;
        sse += e * e;
        confusion[label as usize - 1][round_to_class(p as f64) as usize - 1] += 1;
    }
    let total: u64 = confusion.iter().flatten().sum();
    let trace: u64 = (0..7).map(|k| confusion[k][k]).sum();
    let per_class_diagonal = std::array::from_fn(|k| {
        let row: u64 = confusion[k].iter().sum();
        if row == 0 {
            f64::NAN
        } else {
            confusion[k][k] as f64 / row as f64
        }
    });
    EvalReport {
        rounded_accuracy: if total == 0 { f64::NAN } else { trace as f64 / total as f64 },
        confusion,
        per_class_diagonal,
        mse: if total == 0 { f64::NAN } else { sse / total as f64 },
    }
}

/// Trains on a seeded 80/20 split (or `cfg.test_fraction`) and reports on
/// the held-out part.
pub fn train(ds: &PostureDataset, limits: &JointLimits, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(ds, cfg)?;
    let (train_idx, test_idx) = split_indices(ds.len(), cfg.test_fraction, cfg.seed);
    let mut model = MlpModel::initialized(InputEncoder::new(cfg.input, limits), cfg.seed);
    let loss_trace = fit(&mut model, ds, &train_idx, cfg)?;
    let report = evaluate(&model, ds, &test_idx);
    Ok(TrainOutcome { model, report, loss_trace, train_indices: train_idx, test_indices: test_idx })
}

/// One report per fold, each from a model trained on the other folds.
pub fn kfold_cv(ds: &PostureDataset, limits: &JointLimits, cfg: &TrainConfig) -> Result<Vec<EvalReport>> {
    cfg.validate()?;
    check_dataset(ds, cfg)?;
    let folds = fold_indices(ds.len(), cfg.folds, cfg.seed)?;
    let mut reports = Vec::with_capacity(folds.len());
    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> =
            folds.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, idx)| idx.iter().copied()).collect();
        let mut model = MlpModel::initialized(InputEncoder::new(cfg.input, limits), cfg.seed.wrapping_add(f as u64));
        fit(&mut model, ds, &train, cfg)?;
        reports.push(evaluate(&model, ds, test));
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::JointPosture;
    use crate::rula::{generate_dataset, DatasetConfig, LabeledPosture, TaskContext};

    #[test]
    fn batched_forward_matches_single_sample() {
        let lim = JointLimits::default();
        let ds = generate_dataset(&DatasetConfig::new(70, true, 1), &lim).unwrap();
        let model = MlpModel::initialized(InputEncoder::new(InputVariant::PostureAndContext, &lim), 9);
        let idx: Vec<usize> = (0..ds.len()).collect();
        let batched = predict(&model, &ds, &idx);
        for (i, p) in batched.iter().enumerate() {
            let r = &ds.records[i];
            let single = model.score(&r.q, &r.ctx);
            assert!((*p as f64 - single).abs() < 1e-4 * (1.0 + single.abs()));
        }
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let lim = JointLimits::default();
        let ds = generate_dataset(&DatasetConfig::new(70, true, 2), &lim).unwrap();
        let model = MlpModel::initialized(InputEncoder::new(InputVariant::PostureAndContext, &lim), 4);
        let idx: Vec<usize> = (0..16).collect();
        let (x, y) = encode_rows(&model, &ds, &idx);
        let mut ws = Workspace::new(&model, 16);
        ws.acts[0].copy_from_slice(&x.data);
        forward_batch(&model, &mut ws, 16);
        backward_batch(&model, &mut ws, &y);

        // f64 reference loss from the single-sample path.
        let loss = |m: &MlpModel| -> f64 {
            idx.iter()
                .map(|&i| {
                    let r = &ds.records[i];
                    let e = m.score(&r.q, &r.ctx) - r.label as f64;
                    e * e
                })
                .sum::<f64>()
                / idx.len() as f64
        };
        for (li, probe) in [(0usize, 5usize), (2, 300), (4, 3)] {
            let h = 1e-2f32;
            let mut plus = model.clone();
            plus.layers[li].weights[probe] += h;
            let mut minus = model.clone();
            minus.layers[li].weights[probe] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h as f64);
            let g = ws.grads_w[li][probe] as f64;
            assert!((fd - g).abs() < 2e-2 * (1.0 + g.abs()), "layer {li}: fd {fd} vs {g}");
        }
    }

    #[test]
    fn constant_label_converges_to_constant() {
        let lim = JointLimits::default();
        let mut r = rng::seeded(3);
        let records: Vec<LabeledPosture> = (0..2000)
            .map(|_| LabeledPosture {
                q: crate::rula::sample_posture(&mut r, &lim),
                ctx: TaskContext::seated_neutral(),
                label: 4,
            })
            .collect();
        let ds = PostureDataset::from_records(records);
        let cfg = TrainConfig { epochs: 30, batch_size: 128, require_all_classes: false, ..TrainConfig::default() };
        let out = train(&ds, &lim, &cfg).unwrap();
        for &i in out.test_indices.iter().take(200) {
            let rec = &ds.records[i];
            assert!((out.model.score(&rec.q, &rec.ctx) - 4.0).abs() < 0.05);
        }
    }

    #[test]
    fn missing_classes_rejected() {
        let lim = JointLimits::default();
        let ds = PostureDataset::from_records(vec![
            LabeledPosture { q: JointPosture::zeros(), ctx: TaskContext::default(), label: 3 };
            10
        ]);
        assert!(train(&ds, &lim, &TrainConfig::default()).is_err());
        assert!(train(&PostureDataset::default(), &lim, &TrainConfig::default()).is_err());
    }

    #[test]
    fn folds_partition_dataset() {
        let folds = fold_indices(103, 5, 7).unwrap();
        assert_eq!(folds.len(), 5);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        assert!(fold_indices(3, 5, 7).is_err());
        assert!(fold_indices(10, 1, 7).is_err());
    }

    #[test]
    fn kfold_reports_one_per_fold() {
        let lim = JointLimits::default();
        let ds = generate_dataset(&DatasetConfig::new(700, true, 2), &lim).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 64, folds: 5, ..TrainConfig::default() };
        let reports = kfold_cv(&ds, &lim, &cfg).unwrap();
        assert_eq!(reports.len(), 5);
        assert_eq!(reports.iter().map(EvalReport::total).sum::<u64>(), 700);
    }

    #[test]
    fn training_is_reproducible() {
        let lim = JointLimits::default();
        let ds = generate_dataset(&DatasetConfig::new(1400, true, 4), &lim).unwrap();
        let cfg = TrainConfig { epochs: 3, batch_size: 100, ..TrainConfig::default() };
        let a = train(&ds, &lim, &cfg).unwrap();
        let b = train(&ds, &lim, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn report_consistency() {
        let lim = JointLimits::default();
        let ds = generate_dataset(&DatasetConfig::new(700, true, 6), &lim).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 64, ..TrainConfig::default() };
        let out = train(&ds, &lim, &cfg).unwrap();
        let rep = &out.report;
        for k in 0..7 {
            let row: u64 = rep.confusion[k].iter().sum();
            let expected = out.test_indices.iter().filter(|&&i| ds.records[i].label as usize == k + 1).count();
            assert_eq!(row as usize, expected);
        }
        let trace: u64 = (0..7).map(|k| rep.confusion[k][k]).sum();
        assert_eq!(rep.rounded_accuracy, trace as f64 / rep.total() as f64);
    }
}
