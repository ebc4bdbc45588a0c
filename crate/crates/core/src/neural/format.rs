//! Binary model file.
//!
//! Layout, all integers `u32` and all values `f32`, little-endian:
//!
//! ```text
//! "DRVB-AE"  format_version  kind  n_widths  widths[n_widths]  activation  fc_context
//! tensor(norm_mu)  tensor(norm_sigma)  tensor(parameter)...
//! ```
//!
//! where `tensor = ndims dims[ndims] values[prod(dims)]` in row-major order.
//! Parameter tensors follow [`Network::tensors`] order: `W, b` per dense
//! layer; `W_input, W_recurrent, b` per LSTM layer followed by the output
//! layer's `W, b`.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array1;

use super::{Activation, AutoencoderModel, Network, NetworkKind, NetworkSpec};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 7] = b"DRVB-AE";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, dims: &[usize], values: &[f64]) {
    put_u32(out, dims.len() as u32);
    for &d in dims {
        put_u32(out, d as u32);
    }
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Serializes `model` in the model file format.
pub fn write_model<W: Write>(model: &AutoencoderModel, mut writer: W) -> std::io::Result<()> {
    let spec = &model.spec;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(
        &mut out,
        match spec.kind {
            NetworkKind::Fc => 0,
            NetworkKind::Lstm => 1,
        },
    );
    put_u32(&mut out, spec.layer_widths.len() as u32);
    for &w in &spec.layer_widths {
        put_u32(&mut out, w as u32);
    }
    put_u32(&mut out, spec.activation.tag());
    put_u32(&mut out, spec.fc_context as u32);
    put_tensor(&mut out, &[model.norm_mu.len()], model.norm_mu.as_slice().unwrap());
    put_tensor(
        &mut out,
        &[model.norm_sigma.len()],
        model.norm_sigma.as_slice().unwrap(),
    );
    for (shape, values) in model
        .network
        .tensor_shapes()
        .iter()
        .zip(model.network.tensors())
    {
        put_tensor(&mut out, shape, values);
    }
    writer.write_all(&out)
}

/// Writes the model atomically (temporary file, then rename).
pub fn save_model(model: &AutoencoderModel, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    write_model(model, &mut bytes).map_err(|e| Error::io(path, e))?;
    write_atomic(path, &bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::CorruptModel(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tensor(&mut self, expected: &[usize], what: &str) -> Result<Vec<f64>> {
        let ndims = self.u32(what)? as usize;
        if ndims != expected.len() {
            return Err(Error::CorruptModel(format!(
                "{what}: {ndims} dimensions, expected {}",
                expected.len()
            )));
        }
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(self.u32(what)? as usize);
        }
        if dims != expected {
            return Err(Error::CorruptModel(format!(
                "{what}: shape {dims:?} inconsistent with declared widths (expected {expected:?})"
            )));
        }
        let count: usize = dims.iter().product();
        let raw = self.take(count * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }
}

/// Parses a model file; rejects truncated, trailing or inconsistent data.
pub fn read_model<R: Read>(mut reader: R) -> Result<AutoencoderModel> {
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::CorruptModel(e.to_string()))?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::CorruptModel("bad magic".into()));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let kind = match cur.u32("kind")? {
        0 => NetworkKind::Fc,
        1 => NetworkKind::Lstm,
        k => return Err(Error::CorruptModel(format!("unknown kind tag {k}"))),
    };
    let n_widths = cur.u32("width count")? as usize;
    if n_widths < 2 || n_widths > 64 {
        return Err(Error::CorruptModel(format!("implausible width count {n_widths}")));
    }
    let mut layer_widths = Vec::with_capacity(n_widths);
    for _ in 0..n_widths {
        layer_widths.push(cur.u32("layer width")? as usize);
    }
    let tag = cur.u32("activation")?;
    let activation = Activation::from_tag(tag)
        .ok_or_else(|| Error::CorruptModel(format!("unknown activation tag {tag}")))?;
    let fc_context = cur.u32("context")? as usize;
    let spec = NetworkSpec {
        kind,
        layer_widths,
        activation,
        fc_context,
    };
    spec.validate()
        .map_err(|e| Error::CorruptModel(format!("inconsistent header: {e}")))?;

    let bins = spec.num_bins();
    let mu = Array1::from(cur.tensor(&[bins], "norm_mu")?);
    let sigma = Array1::from(cur.tensor(&[bins], "norm_sigma")?);
    let mut network = Network::zeros(&spec);
    let shapes = network.tensor_shapes();
    for (i, (shape, slot)) in shapes.iter().zip(network.tensors_mut()).enumerate() {
        let values = cur.tensor(shape, &format!("parameter tensor {i}"))?;
        slot.copy_from_slice(&values);
    }
    if cur.pos != bytes.len() {
        return Err(Error::CorruptModel(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    AutoencoderModel::new(spec, network, mu, sigma)
        .map_err(|e| Error::CorruptModel(e.to_string()))
}

pub fn load_model(path: &Path) -> Result<AutoencoderModel> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(std::io::BufReader::new(file))
}
