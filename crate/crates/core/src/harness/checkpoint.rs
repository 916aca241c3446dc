use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::cells::{LapNet, ModelConfig};
use crate::diffcore::{OptimizerState, ParamSet, Tensor};
use crate::error::{Error, Result};

pub const LAPC_MAGIC: &[u8; 4] = b"LAPC";
pub const LAPC_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    run: RunConfig,
    model: ModelConfig,
}

/// Model parameters, optimizer moments and progress of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub run: RunConfig,
    pub model: LapNet,
    pub optimizer: OptimizerState,
    /// Completed epochs.
    pub epoch: u64,
}

// Layout: "LAPC", version u8, meta length u32 + JSON {run, model},
// epoch u64, optimizer step u64, tensor count u32, then per tensor:
// name length u16 + UTF-8 name, rank u8, dims u32 each, values, first
// moments, second moments (all f64). Trailing CRC-32 of every prior byte.
// Integers and floats are little-endian.
impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&Meta {
            run: self.run.clone(),
            model: *self.model.config(),
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(LAPC_MAGIC);
        out.push(LAPC_VERSION);
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.optimizer.step.to_le_bytes());
        let params = self.model.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (id, name, value) in params.iter() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(value.shape().len() as u8);
            for &d in value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for t in [
                value,
                &self.optimizer.first_moment[id.index()],
                &self.optimizer.second_moment[id.index()],
            ] {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != LAPC_MAGIC {
            return Err(Error::format("magic", "not a LAPC checkpoint"));
        }
        if bytes.get(4) != Some(&LAPC_VERSION) {
            return Err(Error::format("version", format!("expected {LAPC_VERSION}")));
        }
        if bytes.len() < 9 {
            return Err(Error::format("checksum", "checkpoint truncated"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::format("checksum", "checkpoint checksum mismatch"));
        }

        let mut r = Cursor { buf: body, at: 5 };
        let meta_len = r.u32()? as usize;
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?)?;
        meta.run.validate()?;
        let epoch = r.u64()?;
        let step = r.u64()?;
        let count = r.u32()? as usize;

        let mut params = ParamSet::new();
        let (mut first, mut second) = (Vec::with_capacity(count), Vec::with_capacity(count));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format("tensor name", "not UTF-8"))?
                .to_string();
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let mut tensor = || -> Result<Tensor> {
                let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                Tensor::new(shape.clone(), data).map_err(|e| Error::format("tensor shape", e.to_string()))
            };
            let value = tensor()?;
            first.push(tensor()?);
            second.push(tensor()?);
            params.insert(name, value);
        }
        if r.at != body.len() {
            return Err(Error::format("length", "trailing bytes after the last tensor"));
        }

        let model = LapNet::from_params(meta.model, params.clone())?;
        let stored_index = |name: &str| params.find(name).expect("from_params checked every name").index();
        let order: Vec<usize> = model.params().iter().map(|(_, name, _)| stored_index(name)).collect();
        let optimizer = OptimizerState {
            config: meta.run.adam(),
            step,
            first_moment: order.iter().map(|&i| first[i].clone()).collect(),
            second_moment: order.iter().map(|&i| second[i].clone()).collect(),
        };
        Ok(Checkpoint {
            run: meta.run,
            model,
            optimizer,
            epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format("length", "checkpoint ends early"))?;
        let out = &self.buf[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
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
}
