//! Versioned binary checkpoints.
//!
//! Layout (little endian): magic `DGCFCKPT`, `u32` version, `u32` length
//! plus UTF-8 config text (`key = value` lines), `u64` completed epochs,
//! `u64` users, items, d, K, then the parameter table and the two Adam
//! states (`u64` step, first moments, second moments) as `f64` arrays.

use std::fs;
use std::path::Path;

use crate::embedding::ChunkedEmbeddingTable;
use crate::error::{DgcfError, Result};
use crate::trainer::{OptimizerState, TrainState, TrainingConfig};

const MAGIC: &[u8; 8] = b"DGCFCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainingConfig,
    pub state: TrainState,
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    buf.reserve(vs.len() * 8);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_opt(buf: &mut Vec<u8>, opt: &OptimizerState) {
    put_u64(buf, opt.step);
    put_f64s(buf, &opt.m);
    put_f64s(buf, &opt.v);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let raw = self.take(n.checked_mul(8).ok_or("size overflow")?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn opt(&mut self, n: usize) -> std::result::Result<OptimizerState, String> {
        let step = self.u64()?;
        let m = self.f64s(n)?;
        let v = self.f64s(n)?;
        Ok(OptimizerState { m, v, step })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.state.params;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = self.config.to_kv();
        buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        buf.extend_from_slice(cfg.as_bytes());
        put_u64(&mut buf, self.state.epoch as u64);
        for v in [p.num_users(), p.num_items(), p.dim(), p.intents()] {
            put_u64(&mut buf, v as u64);
        }
        put_f64s(&mut buf, p.values());
        put_opt(&mut buf, &self.state.bpr_opt);
        put_opt(&mut buf, &self.state.cor_opt);
        buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |message: String| DgcfError::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).map_err(fail)? != MAGIC {
            return Err(fail("not a checkpoint file".into()));
        }
        let version = r.u32().map_err(fail)?;
        if version != CHECKPOINT_VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        let len = r.u32().map_err(fail)? as usize;
        let text = std::str::from_utf8(r.take(len).map_err(fail)?)
            .map_err(|e| fail(format!("config is not UTF-8: {e}")))?;
        let config = TrainingConfig::from_kv(text)?;
        let epoch = r.u64().map_err(fail)? as usize;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u64().map_err(fail)? as usize;
        }
        let [users, items, dim, intents] = dims;
        if dim != config.dim || intents != config.intents {
            return Err(fail(format!(
                "table is d={dim} K={intents} but config says d={} K={}",
                config.dim, config.intents
            )));
        }
        let count = users
            .checked_add(items)
            .and_then(|n| n.checked_mul(dim))
            .ok_or_else(|| fail("table size overflow".into()))?;
        let values = r.f64s(count).map_err(fail)?;
        let params = ChunkedEmbeddingTable::from_values(users, items, dim, intents, values)?;
        let bpr_opt = r.opt(count).map_err(fail)?;
        let cor_opt = r.opt(count).map_err(fail)?;
        if r.pos != bytes.len() {
            return Err(fail(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            config,
            state: TrainState {
                params,
                bpr_opt,
                cor_opt,
                epoch,
            },
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| DgcfError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| DgcfError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
