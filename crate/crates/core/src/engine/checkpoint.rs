//! Binary checkpoint layout (all integers u32 little-endian):
//!
//! ```text
//! "RRDK1" | meta_len | graph JSON (meta_len bytes) | tensor_count |
//!   { name_len | name | ndims | dims... | f32 LE values }*
//! ```
//! Tensors are stored in name order.

use std::path::Path;

use super::model::Model;
use super::params::Params;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::netir::NetworkGraph;

pub const MAGIC: &[u8; 5] = b"RRDK1";

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::format("checkpoint", format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn to_bytes(model: &Model<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let meta = serde_json::to_vec(&model.graph).map_err(|e| Error::format("checkpoint", e.to_string()))?;
    put_u32(&mut out, meta.len())?;
    out.extend_from_slice(&meta);
    put_u32(&mut out, model.params.len())?;
    for (name, t) in model.params.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.dims().len())?;
        for &d in t.dims() {
            put_u32(&mut out, d)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint", format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(Error::format("checkpoint", "bad magic bytes"));
    }
    let meta_len = r.u32()?;
    let graph: NetworkGraph =
        serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::format("checkpoint", e.to_string()))?;
    let count = r.u32()?;
    let mut params = Params::new();
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::format("checkpoint", "tensor name is not UTF-8"))?
            .to_string();
        let ndims = r.u32()?;
        let dims = (0..ndims).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.ok_or_else(|| Error::format("checkpoint", "tensor too large"))?;
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::format("checkpoint", "tensor too large"))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        params.insert(name, Tensor::from_vec(&dims, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::format("checkpoint", "trailing bytes after tensor table"));
    }
    Model::new(graph, params).map_err(|e| Error::format("checkpoint", e.to_string()))
}

pub fn load(path: &Path) -> Result<Model<f32>> {
    from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
