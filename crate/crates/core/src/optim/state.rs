//! Resume file for an interrupted run.
//!
//! ```text
//! magic    8 bytes "HINTSTAT"
//! version  u32
//! meta     u64 length + JSON (config, schedule, counters, log)
//! net      u64 length + checkpoint bytes
//! best     u64 length + checkpoint bytes (length 0: none yet)
//! opt ×2   supervised then hint optimizer
//! ```
//!
//! An optimizer is `u8` kind; SGD stores `lr`; AdaDelta stores `rho`,
//! `eps`, a `u32` slot count and per slot a presence byte followed by
//! four tensors (weight E[g²], E[Δx²], bias E[g²], E[Δx²]), each as
//! `u32` rank, `u32` dims and `f64` values. Everything is little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trainer::{TrainLog, TrainSchedule, Trainer};
use super::{AdaDelta, AdaDeltaState, Optimizer, Sgd};
use crate::error::{Error, Result};
use crate::losses::HintConfig;
use crate::network::NetworkSplit;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"HINTSTAT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    config: HintConfig,
    schedule: TrainSchedule,
    epochs_done: usize,
    batches_done: u64,
    log: TrainLog,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_block(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    put_u32(out, t.ndim() as u32);
    t.shape().iter().for_each(|&d| put_u32(out, d as u32));
    t.data().iter().for_each(|&v| put_f64(out, v));
}

fn put_optimizer(out: &mut Vec<u8>, opt: &Optimizer) {
    match opt {
        Optimizer::Sgd(s) => {
            out.push(1);
            put_f64(out, s.lr);
        }
        Optimizer::AdaDelta(a) => {
            out.push(0);
            put_f64(out, a.rho);
            put_f64(out, a.eps);
            put_u32(out, a.slots.len() as u32);
            for slot in &a.slots {
                match slot {
                    None => out.push(0),
                    Some([w, b]) => {
                        out.push(1);
                        for t in [&w.sq_grad, &w.sq_update, &b.sq_grad, &b.sq_update] {
                            put_tensor(out, t);
                        }
                    }
                }
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::format(self.origin, self.pos as u64, message)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn block(&mut self, what: &str) -> Result<&'a [u8]> {
        let n = u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes"));
        self.take(usize::try_from(n).unwrap_or(usize::MAX), what)
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32("tensor rank")? as usize;
        if rank > 8 {
            return Err(self.fail(format!("implausible tensor rank {rank}")));
        }
        let shape: Vec<usize> = (0..rank)
            .map(|_| self.u32("tensor dims").map(|d| d as usize))
            .collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let at = self.pos as u64;
        let raw = self.take(n.checked_mul(8).unwrap_or(usize::MAX), "tensor values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data).map_err(|e| Error::format(self.origin, at, e.to_string()))
    }

    fn optimizer(&mut self) -> Result<Optimizer> {
        match self.u8("optimizer kind")? {
            1 => Ok(Optimizer::Sgd(Sgd { lr: self.f64("lr")? })),
            0 => {
                let rho = self.f64("rho")?;
                let eps = self.f64("eps")?;
                let count = self.u32("slot count")? as usize;
                let mut slots = Vec::with_capacity(count.min(64));
                for _ in 0..count {
                    slots.push(match self.u8("slot flag")? {
                        0 => None,
                        1 => {
                            let (wg, wu, bg, bu) = (self.tensor()?, self.tensor()?, self.tensor()?, self.tensor()?);
                            Some([
                                AdaDeltaState { sq_grad: wg, sq_update: wu },
                                AdaDeltaState { sq_grad: bg, sq_update: bu },
                            ])
                        }
                        f => return Err(self.fail(format!("bad slot flag {f}"))),
                    });
                }
                Ok(Optimizer::AdaDelta(AdaDelta::from_slots(rho, eps, slots)))
            }
            k => Err(self.fail(format!("unknown optimizer kind {k}"))),
        }
    }
}

impl Trainer {
    pub fn state_bytes(&self) -> Vec<u8> {
        let meta = Meta {
            config: self.config,
            schedule: self.schedule,
            epochs_done: self.epochs_done,
            batches_done: self.batches_done,
            log: self.log.clone(),
        };
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_block(&mut out, &serde_json::to_vec(&meta).expect("state metadata serializes"));
        put_block(&mut out, &self.net.to_checkpoint_bytes());
        put_block(&mut out, &self.best.as_ref().map(NetworkSplit::to_checkpoint_bytes).unwrap_or_default());
        put_optimizer(&mut out, &self.sup_opt);
        put_optimizer(&mut out, &self.hint_opt);
        out
    }

    pub fn from_state_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::format(origin, 0, "not a training state file (bad magic)"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.fail(format!("unsupported state version {version}")));
        }
        let at = r.pos as u64;
        let meta: Meta = serde_json::from_slice(r.block("metadata")?)
            .map_err(|e| Error::format(origin, at, format!("metadata: {e}")))?;
        let at = r.pos as u64;
        let net = NetworkSplit::from_checkpoint_bytes(r.block("network")?)
            .map_err(|e| Error::format(origin, at, format!("network: {e}")))?;
        let at = r.pos as u64;
        let best = match r.block("best network")? {
            [] => None,
            b => Some(
                NetworkSplit::from_checkpoint_bytes(b)
                    .map_err(|e| Error::format(origin, at, format!("best network: {e}")))?,
            ),
        };
        let sup_opt = r.optimizer()?;
        let hint_opt = r.optimizer()?;
        if r.pos != bytes.len() {
            return Err(r.fail("trailing bytes after optimizer state"));
        }
        Ok(Trainer {
            net,
            best,
            config: meta.config,
            schedule: meta.schedule,
            sup_opt,
            hint_opt,
            epochs_done: meta.epochs_done,
            batches_done: meta.batches_done,
            log: meta.log,
        })
    }

    /// Writes the state file through a temporary sibling and a rename, so
    /// an interruption never leaves a half-written file behind.
    pub fn save_state(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.state_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load_state(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_state_bytes(&bytes, path)
    }
}
