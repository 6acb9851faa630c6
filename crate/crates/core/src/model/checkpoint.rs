//! Binary checkpoint format.
//!
//! ```text
//! "PLBK" | version: u32 | config_len: u32 | config JSON
//!        | tensor_count: u32
//!        | per tensor, sorted by name:
//!            name_len: u32 | name | ndim: u32 | dims: u32 × ndim | f32 × Π dims
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use super::config::ModelConfig;
use super::params::Parameters;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PLBK";
pub const VERSION: u32 = 1;

pub fn encode_tensors(config: &ModelConfig, tensors: &[(String, &Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut sorted: Vec<&(String, &Tensor<f32>)> = tensors.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let config_json = serde_json::to_vec(config)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&config_json);
    out.extend_from_slice(&(sorted.len() as u32).to_le_bytes());
    for (name, t) in sorted {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &dim in &t.shape {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<(ModelConfig, BTreeMap<String, Tensor<f32>>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len)?)?;
    let count = r.u32()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.insert(name, Tensor { shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok((config, tensors))
}

/// Fill a parameter set of `config`'s shapes from named tensors. Names outside
/// `prefix` are ignored.
pub fn params_from_tensors(
    config: &ModelConfig,
    tensors: &BTreeMap<String, Tensor<f32>>,
    prefix: &str,
) -> Result<Parameters<f32>> {
    let mut params = Parameters::<f32>::zeros(config);
    for (name, _, t) in params.tensors_mut() {
        let key = format!("{prefix}{name}");
        let src = tensors
            .get(&key)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
        if src.shape != t.shape {
            return Err(Error::ShapeMismatch {
                name: key,
                expected: t.shape.clone(),
                found: src.shape.clone(),
            });
        }
        t.data.copy_from_slice(&src.data);
    }
    Ok(params)
}

pub fn to_bytes(params: &Parameters<f32>) -> Result<Vec<u8>> {
    let named: Vec<(String, &Tensor<f32>)> = params.tensors().into_iter().map(|(n, _, t)| (n, t)).collect();
    encode_tensors(&params.config, &named)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Parameters<f32>> {
    let (config, tensors) = decode_tensors(bytes)?;
    config.validate()?;
    let params = params_from_tensors(&config, &tensors, "")?;
    if tensors.len() != params.tensors().len() {
        return Err(Error::Checkpoint("unexpected extra tensors".into()));
    }
    Ok(params)
}

pub fn save(params: &Parameters<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(params)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Parameters<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
