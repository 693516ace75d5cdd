//! Single-file checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "RCANCKPT"
//! version      u32 major, u32 minor
//! header       u64 length, then UTF-8 JSON (model config, iteration,
//!              stages, metric history, init scheme, loss scale, run config)
//! params       u32 count, then records
//! optimizer    u8 present; if 1: u64 step, u32 count, records named
//!              "m.<param>" followed by records named "v.<param>"
//! rng          56 bytes: 32-byte seed, u64 stream, u128 word position
//! end marker   8 bytes  "RCANEND\0"
//!
//! record       u32 name length, name bytes, u8 dtype (0 = f32, 1 = f64),
//!              u32 rank, u64 per dim, raw element data
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, INIT_SCHEME};
use crate::optim::{LossScaler, OptimizerState};
use crate::rng::RngSnapshot;
use crate::tensor::{DType, Tensor};

pub const MAGIC: &[u8; 8] = b"RCANCKPT";
pub const END_MARKER: &[u8; 8] = b"RCANEND\0";
pub const VERSION_MAJOR: u32 = 1;
pub const VERSION_MINOR: u32 = 0;

/// One completed training stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub iters: u64,
}

/// A validation measurement taken during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub stage: String,
    /// Global iteration count at the time of measurement.
    pub iteration: u64,
    pub val_psnr: f64,
    /// Mean training loss since the previous measurement.
    pub train_l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    iteration: u64,
    stages: Vec<StageRecord>,
    history: Vec<HistoryEntry>,
    init_scheme: String,
    loss_scale: Option<LossScaler>,
    config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
    /// Total iterations across all recorded stages.
    pub iteration: u64,
    pub stages: Vec<StageRecord>,
    pub history: Vec<HistoryEntry>,
    pub rng: RngSnapshot,
    pub loss_scale: Option<LossScaler>,
    /// Snapshot of the configuration that produced this checkpoint.
    pub config: serde_json::Value,
    pub init_scheme: String,
}

impl Checkpoint {
    /// A checkpoint with no training history.
    pub fn fresh(model: Model<f32>, rng: RngSnapshot) -> Self {
        Checkpoint {
            model,
            optimizer: None,
            iteration: 0,
            stages: Vec::new(),
            history: Vec::new(),
            rng,
            loss_scale: None,
            config: serde_json::Value::Null,
            init_scheme: INIT_SCHEME.to_string(),
        }
    }

    /// Stage name of the most recent stage, if any.
    pub fn last_stage(&self) -> Option<&str> {
        self.stages.last().map(|s| s.name.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION_MAJOR.to_le_bytes());
        out.extend_from_slice(&VERSION_MINOR.to_le_bytes());
        let header = Header {
            model: self.model.config().clone(),
            iteration: self.iteration,
            stages: self.stages.clone(),
            history: self.history.clone(),
            init_scheme: self.init_scheme.clone(),
            loss_scale: self.loss_scale,
            config: self.config.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let params = self.model.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in params {
            write_record(&mut out, &p.name, &p.tensor);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(state) => {
                out.push(1);
                out.extend_from_slice(&state.step.to_le_bytes());
                out.extend_from_slice(&(state.m.len() as u32).to_le_bytes());
                for (p, m) in params.iter().zip(&state.m) {
                    write_record(&mut out, &format!("m.{}", p.name), m);
                }
                for (p, v) in params.iter().zip(&state.v) {
                    write_record(&mut out, &format!("v.{}", p.name), v);
                }
            }
        }
        out.extend_from_slice(&self.rng.to_bytes());
        out.extend_from_slice(END_MARKER);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let major = r.u32()?;
        let _minor = r.u32()?;
        if major != VERSION_MAJOR {
            return Err(Error::Version {
                found: major,
                supported: VERSION_MAJOR,
            });
        }
        let hlen = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            tensors.push(r.record()?);
        }
        let model = Model::from_named(&header.model, tensors)?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let count = r.u32()? as usize;
                if count != model.params().len() {
                    return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
                }
                let mut read_moments = |prefix: &str| -> Result<Vec<Tensor<f32>>> {
                    model
                        .params()
                        .iter()
                        .map(|p| {
                            let (name, t) = r.record()?;
                            if name != format!("{prefix}.{}", p.name) || t.shape() != p.tensor.shape() {
                                return Err(Error::Checkpoint(format!("unexpected optimizer record `{name}`")));
                            }
                            Ok(t)
                        })
                        .collect()
                };
                let m = read_moments("m")?;
                let v = read_moments("v")?;
                Some(OptimizerState { step, m, v })
            }
            other => return Err(Error::Checkpoint(format!("bad optimizer flag {other}"))),
        };
        let rng = RngSnapshot::from_bytes(r.take(56)?).ok_or_else(|| Error::Checkpoint("bad RNG state".into()))?;
        if r.take(8)? != END_MARKER {
            return Err(Error::Checkpoint("missing end marker".into()));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after end marker".into()));
        }
        Ok(Checkpoint {
            model,
            optimizer,
            iteration: header.iteration,
            stages: header.stages,
            history: header.history,
            rng,
            loss_scale: header.loss_scale,
            config: header.config,
            init_scheme: header.init_scheme,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn write_record(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(DType::F32.code());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!("file truncated at byte {}", self.pos))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn record(&mut self) -> Result<(String, Tensor<f32>)> {
        let nlen = self.u32()? as usize;
        let name = String::from_utf8(self.take(nlen)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let dtype = self.u8()?;
        if DType::from_code(dtype) != Some(DType::F32) {
            return Err(Error::Checkpoint(format!("tensor `{name}` has unsupported dtype {dtype}")));
        }
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("tensor `{name}` has rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u64()? as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` is too large")))?;
        let raw = self.take(count.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok((name, Tensor::from_vec(&dims, data)?))
    }
}
