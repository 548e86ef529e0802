//! Binary checkpoint container:
//!
//! ```text
//! "EVKE" | u32 version | u64 meta length | meta JSON
//! | u32 tensor count | per tensor: u32 name length, name, u32 rank,
//!   u64 dims…, f64 payload
//! ```
//!
//! All integers and floats are little-endian. Each parameter contributes
//! its value and both Adam moments (`adam.m/<name>`, `adam.v/<name>`).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainState};
use crate::autodiff::{ParameterStore, Tensor, MAX_RANK};
use crate::error::{Error, Result};
use crate::layers::{EventKe, ModelConfig};
use crate::scoring::ConvEConfig;

const MAGIC: &[u8; 4] = b"EVKE";
pub const FORMAT_VERSION: u32 = 1;
const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub conve: ConvEConfig,
    pub train: TrainConfig,
    pub state: TrainState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParameterStore,
}

impl Checkpoint {
    pub fn new(model: &EventKe, train: &TrainConfig, state: TrainState, mut params: ParameterStore) -> Self {
        params.zero_grads();
        Checkpoint {
            meta: CheckpointMeta {
                model: model.config.clone(),
                conve: model.conve.clone(),
                train: train.clone(),
                state,
            },
            params,
        }
    }

    /// The parameters, after checking they fit `model` exactly.
    pub fn restore(&self, model: &EventKe) -> Result<ParameterStore> {
        if self.meta.model.dim != model.config.dim || self.meta.conve != model.conve {
            return Err(Error::Checkpoint(format!(
                "checkpoint was written for dim {} / scorer {:?}, model has dim {} / scorer {:?}",
                self.meta.model.dim, self.meta.conve, model.config.dim, model.conve
            )));
        }
        model
            .init_params(None)?
            .check_same_layout(&self.params)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + meta.len() + 24 * self.params.scalar_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(3 * self.params.len() as u32).to_le_bytes());
        for p in self.params.iter() {
            write_tensor(&mut out, &p.name, &p.value);
            write_tensor(&mut out, &format!("{M_PREFIX}{}", p.name), &p.first_moment);
            write_tensor(&mut out, &format!("{V_PREFIX}{}", p.name), &p.second_moment);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("not an EVKE checkpoint".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let meta_len = r.u64()? as usize;
        let meta: CheckpointMeta =
            serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let count = r.u32()? as usize;
        if !count.is_multiple_of(3) {
            return Err(Error::Checkpoint(format!("{count} tensors is not a whole parameter set")));
        }
        let mut params = ParameterStore::new();
        for _ in 0..count / 3 {
            let (name, value) = r.tensor()?;
            let (m_name, m) = r.tensor()?;
            let (v_name, v) = r.tensor()?;
            if m_name != format!("{M_PREFIX}{name}") || v_name != format!("{V_PREFIX}{name}") {
                return Err(Error::Checkpoint(format!("moment tensors out of order near `{name}`")));
            }
            if m.shape() != value.shape() || v.shape() != value.shape() {
                return Err(Error::Checkpoint(format!("moment shape mismatch for `{name}`")));
            }
            params.insert(name.clone(), value)?;
            let p = params.get_mut(&name)?;
            p.first_moment = m;
            p.second_moment = v;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { meta, params })
    }
}

fn write_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
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
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = self.u32()? as usize;
        if rank > MAX_RANK {
            return Err(Error::Checkpoint(format!("`{name}` has rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= self.bytes.len() - self.pos))
            .ok_or_else(|| Error::Checkpoint(format!("`{name}` payload exceeds the file")))?;
        let data = self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((name, Tensor::new(shape, data)?))
    }
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = checkpoint.to_bytes()?;
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
