//! Single-file checkpoints: `MHCK`, a little-endian `u64` manifest length,
//! the JSON manifest, then one float64 FPK1 record per tensor in manifest
//! order (parameters, then first moments, then second moments).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::data::fpk::{self, Dtype};
use crate::error::{Error, Result};
use crate::model::MhDetr;
use crate::optim::AdamW;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MHCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    arch_hash: String,
    step: u64,
    adam_t: u64,
    config: Config,
    params: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    pub step: u64,
    pub adam_t: u64,
    pub params: Vec<(String, Tensor)>,
    pub adam_m: Vec<Tensor>,
    pub adam_v: Vec<Tensor>,
}

impl Checkpoint {
    pub fn capture(config: &Config, model: &MhDetr, opt: &AdamW, step: u64) -> Self {
        Checkpoint {
            config: config.clone(),
            step,
            adam_t: opt.t,
            params: model.params.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect(),
            adam_m: opt.m.clone(),
            adam_v: opt.v.clone(),
        }
    }

    pub fn arch_hash(&self) -> String {
        self.config.model.arch_hash()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            version: VERSION,
            arch_hash: self.arch_hash(),
            step: self.step,
            adam_t: self.adam_t,
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.iter().map(|(_, t)| t).chain(&self.adam_m).chain(&self.adam_v) {
            out.extend(fpk::encode(t, Dtype::F64)?);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::format("not a checkpoint file (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(12..12usize.saturating_add(len)).ok_or_else(|| Error::format("truncated checkpoint manifest"))?;
        let manifest: Manifest = serde_json::from_slice(body)?;
        if manifest.version != VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {}", manifest.version)));
        }
        if manifest.arch_hash != manifest.config.model.arch_hash() {
            return Err(Error::format("checkpoint manifest hash does not match its config"));
        }
        let mut pos = 12 + len;
        let n = manifest.params.len();
        let mut tensors = Vec::with_capacity(3 * n);
        for _ in 0..3 * n {
            let (t, _, used) = fpk::decode_prefix(&bytes[pos..])?;
            pos += used;
            tensors.push(t);
        }
        if pos != bytes.len() {
            return Err(Error::format(format!("{} trailing bytes in checkpoint", bytes.len() - pos)));
        }
        let adam_v = tensors.split_off(2 * n);
        let adam_m = tensors.split_off(n);
        let mut params = Vec::with_capacity(n);
        for (e, t) in manifest.params.into_iter().zip(tensors) {
            if e.shape != t.shape() {
                return Err(Error::format(format!("tensor {} has shape {:?}, manifest says {:?}", e.name, t.shape(), e.shape)));
            }
            params.push((e.name, t));
        }
        Ok(Checkpoint {
            config: manifest.config,
            step: manifest.step,
            adam_t: manifest.adam_t,
            params,
            adam_m,
            adam_v,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Copies weights into `model`; names, order and shapes must agree.
    pub fn restore_params(&self, model: &mut MhDetr) -> Result<()> {
        let want = model.config.arch_hash();
        if self.arch_hash() != want {
            return Err(Error::config(format!(
                "checkpoint architecture {} does not match model architecture {}",
                &self.arch_hash()[..12],
                &want[..12]
            )));
        }
        let ids: Vec<_> = model.params.ids().collect();
        if ids.len() != self.params.len() {
            return Err(Error::config("checkpoint and model differ in parameter count"));
        }
        for (id, (name, t)) in ids.into_iter().zip(&self.params) {
            if model.params.name(id) != name || model.params.get(id).shape() != t.shape() {
                return Err(Error::config(format!("checkpoint tensor {name} does not fit model slot {}", model.params.name(id))));
            }
            *model.params.get_mut(id) = t.clone();
        }
        Ok(())
    }

    /// Model built from the stored config with the stored weights.
    pub fn to_model(&self) -> Result<MhDetr> {
        let mut m = MhDetr::new(&self.config.model)?;
        self.restore_params(&mut m)?;
        Ok(m)
    }

    pub fn restore_optimizer(&self, opt: &mut AdamW) -> Result<()> {
        if opt.m.len() != self.adam_m.len() {
            return Err(Error::config("checkpoint optimizer state does not fit"));
        }
        opt.t = self.adam_t;
        opt.m = self.adam_m.clone();
        opt.v = self.adam_v.clone();
        Ok(())
    }
}
