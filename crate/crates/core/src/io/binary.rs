//! Little-endian binary containers for feature matrices and checkpoints.

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::nnet::{AedEend, ModelConfig};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 8] = b"EENDFEAT";
pub const FEATURE_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EENDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Byte reader that reports truncation as a format error.
struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8], kind: &'static str) -> Self {
        Self { buf, pos: 0, kind }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            kind: self.kind,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| self.err(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.err(format!("size {v} too large")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = n.checked_mul(4).ok_or_else(|| self.err("payload size overflows"))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    fn magic(&mut self, expect: &[u8; 8], version: u32) -> Result<()> {
        if self.take(8)? != expect {
            return Err(self.err("bad magic"));
        }
        let v = self.u32()?;
        if v != version {
            return Err(self.err(format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_f32s(out: &mut Vec<u8>, data: &[f64]) {
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Serializes features: magic `EENDFEAT`, u32 version, u64 rows, u64 cols,
/// f64 frame period, then rows·cols f32 values in row-major order.
pub fn encode_features(f: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(36 + f.tensor().numel() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(f.frames() as u64).to_le_bytes());
    out.extend_from_slice(&(f.dim() as u64).to_le_bytes());
    out.extend_from_slice(&f.frame_period.to_le_bytes());
    put_f32s(&mut out, f.tensor().data());
    out
}

pub fn decode_features(buf: &[u8]) -> Result<FeatureMatrix> {
    let mut c = Cursor::new(buf, "feature");
    c.magic(FEATURE_MAGIC, FEATURE_VERSION)?;
    let rows = c.usize()?;
    let cols = c.usize()?;
    let period = c.f64()?;
    let n = rows.checked_mul(cols).ok_or_else(|| c.err("shape overflows"))?;
    let data = c.f32s(n)?;
    c.finish()?;
    FeatureMatrix::new(rows, cols, data, period)
}

/// Serializes a model: magic `EENDCKPT`, u32 version, u32 length and the
/// `key=value` config text, u32 blob count, then per parameter a u32
/// length-prefixed name, u32 rank, u64 dims and f32 values.
pub fn encode_checkpoint(model: &AedEend) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let text: String = model
        .config()
        .to_kv()
        .into_iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (_, p) in model.params().iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.tensor.rank() as u32).to_le_bytes());
        for &d in p.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        put_f32s(&mut out, p.tensor.data());
    }
    out
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<AedEend> {
    let mut c = Cursor::new(buf, "checkpoint");
    c.magic(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let len = c.u32()? as usize;
    let text = std::str::from_utf8(c.take(len)?).map_err(|_| c.err("config block is not UTF-8"))?;
    let mut cfg = ModelConfig::default();
    for (k, v) in super::config::parse_kv(text)? {
        if !cfg.set(&k, &v)? {
            return Err(c.err(format!("unknown config key {k:?}")));
        }
    }
    let mut model = AedEend::new(cfg)?;
    let count = c.u32()? as usize;
    if count != model.params().len() {
        return Err(c.err(format!("{count} blobs, model has {}", model.params().len())));
    }
    let mut seen = std::collections::HashSet::new();
    for _ in 0..count {
        let n = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(n)?).map_err(|_| c.err("blob name is not UTF-8"))?.to_string();
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.usize()).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| c.err("shape overflows"))?;
        let data = c.f32s(numel)?;
        let id = model
            .params()
            .find(&name)
            .ok_or_else(|| c.err(format!("unknown parameter {name:?}")))?;
        if !seen.insert(id) {
            return Err(c.err(format!("parameter {name:?} appears twice")));
        }
        if model.params().tensor(id).shape() != shape.as_slice() {
            return Err(c.err(format!("parameter {name:?} has shape {shape:?}")));
        }
        *model.params_mut().tensor_mut(id) = Tensor::new(shape, data)?;
    }
    c.finish()?;
    Ok(model)
}
