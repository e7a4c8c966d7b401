//! Binary parameter container: the magic header `EMBDYN1`, a manifest of
//! (name, dtype, shape) entries, then the raw little-endian f64 arrays in
//! manifest order.

use crate::error::{Error, Result};
use crate::model::SiameseState;
use crate::nn::{MlpSpec, NormKind, ParamSet};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 7] = b"EMBDYN1";
const DTYPE_F64: u8 = 0;

/// Serialize named tensors. Entry order is preserved, so identical inputs
/// produce identical bytes.
pub fn write_container(entries: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(DTYPE_F64);
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for (_, tensor) in entries {
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_container(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("bad magic header".into()));
    }
    let count = r.u32("entry count")? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
            .map_err(|_| Error::Checkpoint("non-utf8 entry name".into()))?;
        let dtype = r.take(1, "dtype")?[0];
        if dtype != DTYPE_F64 {
            return Err(Error::Checkpoint(format!("unsupported dtype {dtype}")));
        }
        let ndim = r.u32("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64("dimension")? as usize);
        }
        manifest.push((name, shape));
    }
    let mut entries = Vec::with_capacity(count);
    for (name, shape) in manifest {
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8, "tensor data")?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push((name, Tensor::from_vec(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
    }
    Ok(entries)
}

fn widths_tensor(widths: &[usize]) -> Tensor {
    Tensor::vector(widths.iter().map(|&w| w as f64).collect())
}

fn widths_from_tensor(t: &Tensor) -> Result<Vec<usize>> {
    t.data()
        .iter()
        .map(|&v| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Checkpoint(format!("bad width {v}")))
            }
        })
        .collect()
}

fn norm_code(norm: NormKind) -> f64 {
    match norm {
        NormKind::Batch => 0.0,
        NormKind::Layer => 1.0,
        NormKind::None => 2.0,
    }
}

fn norm_from_code(code: f64) -> Result<NormKind> {
    match code as i64 {
        0 => Ok(NormKind::Batch),
        1 => Ok(NormKind::Layer),
        2 => Ok(NormKind::None),
        other => Err(Error::Checkpoint(format!("bad norm code {other}"))),
    }
}

/// Serialize a full siamese state, including the architecture, so a
/// checkpoint is loadable without the original config.
pub fn save_state(state: &SiameseState) -> Vec<u8> {
    let mut entries: Vec<(String, Tensor)> = Vec::new();
    entries.push(("meta.backbone".into(), widths_tensor(&state.spec.backbone)));
    entries.push(("meta.projector".into(), widths_tensor(&state.spec.projector)));
    entries.push(("meta.predictor".into(), widths_tensor(&state.spec.predictor)));
    entries.push((
        "meta.backbone_norm".into(),
        Tensor::scalar(norm_code(state.spec.backbone_norm)),
    ));
    entries.push(("meta.head_norm".into(), Tensor::scalar(norm_code(state.spec.head_norm))));
    entries.push(("meta.step".into(), Tensor::scalar(state.step as f64)));
    entries.push(("meta.tau_prod".into(), Tensor::scalar(state.tau_prod())));
    entries.push((
        "meta.bias_correction".into(),
        Tensor::scalar(if state.bias_correction { 1.0 } else { 0.0 }),
    ));
    for (name, t) in state.theta.iter() {
        entries.push((format!("theta.{name}"), t.clone()));
    }
    for (name, t) in state.buffers.iter() {
        entries.push((format!("buffers.{name}"), t.clone()));
    }
    for (name, t) in state.xi_raw().iter() {
        entries.push((format!("xi_raw.{name}"), t.clone()));
    }
    write_container(&entries)
}

pub fn load_state(bytes: &[u8]) -> Result<SiameseState> {
    let entries = read_container(bytes)?;
    let mut meta: Vec<(String, Tensor)> = Vec::new();
    let mut theta = ParamSet::new();
    let mut buffers = ParamSet::new();
    let mut xi_raw = ParamSet::new();
    for (name, t) in entries {
        if let Some(rest) = name.strip_prefix("theta.") {
            theta.insert(rest, t);
        } else if let Some(rest) = name.strip_prefix("buffers.") {
            buffers.insert(rest, t);
        } else if let Some(rest) = name.strip_prefix("xi_raw.") {
            xi_raw.insert(rest, t);
        } else if name.starts_with("meta.") {
            meta.push((name, t));
        } else {
            return Err(Error::Checkpoint(format!("unknown entry {name}")));
        }
    }
    let find = |key: &str| -> Result<&Tensor> {
        meta.iter()
            .find(|(n, _)| n == key)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint(format!("missing {key}")))
    };
    let spec = MlpSpec::with_norms(
        widths_from_tensor(find("meta.backbone")?)?,
        widths_from_tensor(find("meta.projector")?)?,
        widths_from_tensor(find("meta.predictor")?)?,
        norm_from_code(find("meta.backbone_norm")?.item())?,
        norm_from_code(find("meta.head_norm")?.item())?,
    )?;
    let step = find("meta.step")?.item() as u64;
    let tau_prod = find("meta.tau_prod")?.item();
    let bias_correction = find("meta.bias_correction")?.item() != 0.0;
    SiameseState::from_parts(spec, theta, buffers, xi_raw, tau_prod, bias_correction, step)
}
