//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "SSNCKPT\0"
//! version  u32 LE
//! hlen     u64 LE   length of the JSON header
//! header   hlen bytes of UTF-8 JSON (step, config, tensor names/shapes)
//! params   f32 LE values of every tensor, in header order
//! adam_m   same layout as params (only if the header says so)
//! adam_v   same layout as params
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use semstereo_autograd::{Adam, AdamConfig, ParamStore, Tensor};

use super::config::RunConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SSNCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config: RunConfig,
    pub params: ParamStore<f32>,
    pub optimizer: Option<Adam<f32>>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    step: u64,
    config: RunConfig,
    tensors: Vec<TensorMeta>,
    adam_step: Option<u64>,
}

fn push_f32s(out: &mut Vec<u8>, tensors: &[Tensor<f32>]) {
    for t in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("file truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn tensors(&mut self, metas: &[TensorMeta]) -> Result<Vec<Tensor<f32>>> {
        metas
            .iter()
            .map(|m| {
                let n: usize = m.shape.iter().product();
                let raw = self.take(4 * n)?;
                let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
                Ok(Tensor::new(&m.shape, data)?)
            })
            .collect()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let entries = self.params.entries();
        let header = Header {
            format_version: FORMAT_VERSION,
            step: self.step,
            config: self.config.clone(),
            tensors: entries.iter().map(|e| TensorMeta { name: e.name.clone(), shape: e.value.shape().to_vec() }).collect(),
            adam_step: self.optimizer.as_ref().map(|a| a.step),
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let values: Vec<Tensor<f32>> = entries.iter().map(|e| e.value.clone()).collect();
        push_f32s(&mut out, &values);
        if let Some(adam) = &self.optimizer {
            push_f32s(&mut out, &adam.m);
            push_f32s(&mut out, &adam.v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
        let header: Header =
            serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let values = r.tensors(&header.tensors)?;
        let mut params = ParamStore::new();
        for (meta, value) in header.tensors.iter().zip(values) {
            params.insert(meta.name.clone(), value);
        }
        let optimizer = match header.adam_step {
            Some(step) => {
                let o = &header.config.optimizer;
                let config = AdamConfig { lr: o.learning_rate, beta1: o.beta1, beta2: o.beta2, eps: o.epsilon };
                let m = r.tensors(&header.tensors)?;
                let v = r.tensors(&header.tensors)?;
                Some(Adam { config, step, m, v })
            }
            None => None,
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { step: header.step, config: header.config, params, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
