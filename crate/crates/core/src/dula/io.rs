//! Model file format (little-endian):
//!
//! ```text
//! magic      8 bytes "DULAMODL"
//! version    u32
//! variant    u8      (0 posture + context, 1 posture only)
//! n_dims     u32
//! dims       n_dims x u32 (input first, output last)
//! norm       dims[0] x (f32 center, f32 half_range)
//! per layer  out*in f32 weights (row-major [out][in]), then out f32 biases
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{InputEncoder, InputVariant, Layer, MlpModel};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"DULAMODL";
pub const MODEL_VERSION: u32 = 1;

pub fn save_model(path: &Path, model: &MlpModel) -> Result<()> {
    model.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&[model.encoder.variant.code()])?;
    let dims = model.layer_dims();
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for d in &dims {
        w.write_all(&(*d as u32).to_le_bytes())?;
    }
    for (c, h) in &model.encoder.normalization {
        w.write_all(&c.to_le_bytes())?;
        w.write_all(&h.to_le_bytes())?;
    }
    for layer in &model.layers {
        for v in layer.weights.iter().chain(&layer.biases) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|_| Error::Format(format!("model file truncated while reading {what}")))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes::<4>(what)?))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes::<4>(what)?))
    }
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    let mut cur = Cursor { inner: BufReader::new(File::open(path)?) };
    if &cur.bytes::<8>("magic")? != MODEL_MAGIC {
        return Err(Error::Format("not a DULA model file (bad magic)".into()));
    }
    let version = cur.u32("version")?;
    if version != MODEL_VERSION {
        return Err(Error::Version { found: version, supported: MODEL_VERSION });
    }
    let variant = InputVariant::from_code(cur.bytes::<1>("variant")?[0])?;
    let n_dims = cur.u32("layer count")? as usize;
    if !(2..=64).contains(&n_dims) {
        return Err(Error::Format(format!("implausible layer count {n_dims}")));
    }
    let dims: Vec<usize> = (0..n_dims).map(|_| cur.u32("layer dims").map(|d| d as usize)).collect::<Result<_>>()?;
    if dims[0] != variant.input_dim() {
        return Err(Error::DimensionMismatch { expected: variant.input_dim(), got: dims[0] });
    }
    let normalization = (0..dims[0])
        .map(|_| Ok((cur.f32("normalization")?, cur.f32("normalization")?)))
        .collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::with_capacity(n_dims - 1);
    for w in dims.windows(2) {
        let mut layer = Layer::zeros(w[0], w[1]);
        for v in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
            *v = cur.f32("weights")?;
        }
        layers.push(layer);
    }
    if cur.inner.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after model weights".into()));
    }
    let model = MlpModel { encoder: InputEncoder { variant, normalization }, layers };
    model.validate()?;
    Ok(model)
}
