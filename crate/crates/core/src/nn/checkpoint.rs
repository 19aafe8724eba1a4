//! Binary model checkpoints.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! "FUPM" | version u16 | layer count u32 |
//!   per layer: kind u8 | rank u8 | dims u32 * rank |
//!              weight count u64 | weights f32 * count |
//!              bias count u64   | biases f32 * count
//! ```

use std::path::Path;

use super::{LayerKind, LayerParams, ModelParams};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FUPM";
pub const VERSION: u16 = 1;

/// Encoded size in bytes, without encoding.
pub fn encoded_len(model: &ModelParams) -> usize {
    4 + 2
        + 4
        + model
            .layers
            .iter()
            .map(|l| 2 + 4 * l.shape.len() + 8 + 4 * l.weights.len() + 8 + 4 * l.biases.len())
            .sum::<usize>()
}

pub fn encode(model: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(model));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for layer in &model.layers {
        out.push(layer.kind.code());
        out.push(layer.shape.len() as u8);
        for &d in &layer.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for values in [&layer.weights, &layer.biases] {
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self) -> std::result::Result<Vec<f32>, String> {
        let n = usize::try_from(self.u64()?).map_err(|e| e.to_string())?;
        let bytes = self.take(n.checked_mul(4).ok_or("length overflow")?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn decode_inner(bytes: &[u8]) -> std::result::Result<ModelParams, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let count = r.u32()?;
    let mut layers = Vec::new();
    for _ in 0..count {
        let code = r.u8()?;
        let kind = LayerKind::from_code(code).ok_or(format!("unknown layer kind {code}"))?;
        let rank = r.u8()?;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let weights = r.f32s()?;
        let biases = r.f32s()?;
        layers.push(LayerParams {
            kind,
            shape,
            weights,
            biases,
        });
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    ModelParams::new(layers).map_err(|e| e.to_string())
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams> {
    decode_inner(bytes).map_err(|reason| Error::format("<memory>", reason))
}

pub fn save(model: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_inner(&bytes).map_err(|reason| Error::format(path, reason))
}
