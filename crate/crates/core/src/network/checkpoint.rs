//! Self-describing binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "HINTCKPT"
//! version      u32      1
//! layer_count  u32
//! tap          u32
//! per layer    kind u8 (0 dense, 1 conv-pool, 2 output)
//!              activation u8 (0 none, 1 tanh, 2 sigmoid)
//!              input_rank u8, weight_rank u8, bias_rank u8
//!              input dims, weight dims, bias dims (u32 each)
//! payload      for each layer: weight values then bias values, f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Layer, LayerKind, NetworkSplit};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HINTCKPT";
const VERSION: u32 = 1;

fn kind_code(kind: LayerKind) -> u8 {
    match kind {
        LayerKind::Dense => 0,
        LayerKind::ConvPool => 1,
        LayerKind::Output => 2,
    }
}

fn act_code(act: Option<Activation>) -> u8 {
    match act {
        None => 0,
        Some(Activation::Tanh) => 1,
        Some(Activation::Sigmoid) => 2,
    }
}

pub(crate) fn encode(net: &NetworkSplit) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + net.param_count() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    out.extend_from_slice(&(net.tap as u32).to_le_bytes());
    for l in &net.layers {
        out.push(kind_code(l.kind));
        out.push(act_code(l.activation));
        out.push(l.input_shape.len() as u8);
        out.push(l.weight.ndim() as u8);
        out.push(l.bias.ndim() as u8);
        for &d in l.input_shape.iter().chain(l.weight.shape()).chain(l.bias.shape()) {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for l in &net.layers {
        for v in l.weight.data().iter().chain(l.bias.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.origin, self.pos as u64, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn dims(&mut self, rank: u8, what: &str) -> Result<Vec<usize>> {
        (0..rank).map(|_| self.u32(what).map(|d| d as usize)).collect()
    }

    fn values(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.take(n.checked_mul(8).unwrap_or(usize::MAX), what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::format(self.origin, self.pos as u64, message)
    }
}

pub(crate) fn decode(bytes: &[u8], origin: &Path) -> Result<NetworkSplit> {
    let mut cur = Cursor { bytes, pos: 0, origin };
    if cur.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(origin, 0, "not a checkpoint (bad magic)"));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(cur.fail(format!("unsupported checkpoint version {version}")));
    }
    let count = cur.u32("layer count")? as usize;
    let tap = cur.u32("tap")? as usize;
    let mut headers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let kind = match cur.u8("layer kind")? {
            0 => LayerKind::Dense,
            1 => LayerKind::ConvPool,
            2 => LayerKind::Output,
            k => return Err(cur.fail(format!("unknown layer kind {k}"))),
        };
        let act = match cur.u8("activation")? {
            0 => None,
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Sigmoid),
            a => return Err(cur.fail(format!("unknown activation {a}"))),
        };
        let (ri, rw, rb) = (cur.u8("rank")?, cur.u8("rank")?, cur.u8("rank")?);
        let input = cur.dims(ri, "input dims")?;
        let weight = cur.dims(rw, "weight dims")?;
        let bias = cur.dims(rb, "bias dims")?;
        headers.push((kind, act, input, weight, bias));
    }
    let mut layers = Vec::with_capacity(count);
    for (kind, act, input, wshape, bshape) in headers {
        let wn = wshape.iter().product();
        let bn = bshape.iter().product();
        let at = cur.pos as u64;
        let w = Tensor::new(wshape, cur.values(wn, "weights")?)
            .map_err(|e| Error::format(origin, at, e.to_string()))?;
        let at = cur.pos as u64;
        let b = Tensor::new(bshape, cur.values(bn, "biases")?)
            .map_err(|e| Error::format(origin, at, e.to_string()))?;
        layers.push(Layer::from_parts(kind, act, input, w, b).map_err(|e| cur.fail(e.to_string()))?);
    }
    if cur.pos != bytes.len() {
        return Err(cur.fail("trailing bytes after payload"));
    }
    NetworkSplit::new(layers, tap).map_err(|e| cur.fail(e.to_string()))
}

pub fn write_checkpoint(net: &NetworkSplit, mut w: impl Write, origin: &Path) -> Result<()> {
    w.write_all(&encode(net)).map_err(|e| Error::io(origin, e))
}

pub fn read_checkpoint(mut r: impl Read, origin: &Path) -> Result<NetworkSplit> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(origin, e))?;
    decode(&bytes, origin)
}

impl NetworkSplit {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        encode(self)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        decode(bytes, Path::new("<memory>"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, encode(self)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        decode(&bytes, path)
    }
}
