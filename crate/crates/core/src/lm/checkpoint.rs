//! Self-describing binary container: magic, a JSON header (config,
//! vocabulary, tensor names and shapes, free-form metadata), then every
//! tensor as little-endian `f64` in header order. Loading a saved checkpoint
//! reproduces every scalar bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig, Parameters};
use super::vocab::Vocabulary;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"OPCDCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocabulary,
    tensors: Vec<TensorEntry>,
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// Model weights plus any auxiliary tensors (optimizer moments, teacher
/// snapshots) and metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    /// Model tensors under their layout names; auxiliary tensors under any
    /// other name.
    pub tensors: Vec<(String, Tensor)>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        Self {
            config: model.config().clone(),
            vocab: (**model.vocab()).clone(),
            tensors: model.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
            meta: serde_json::Value::Null,
        }
    }

    /// Adds `params` under `prefix.` (e.g. a teacher snapshot).
    pub fn push_params(&mut self, prefix: &str, params: &Parameters) {
        self.tensors.extend(params.iter().map(|(n, t)| (format!("{prefix}.{n}"), t.clone())));
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn params_with_prefix(&self, prefix: Option<&str>) -> Result<Parameters> {
        let named = self
            .config
            .layout()
            .into_iter()
            .map(|(name, _)| {
                let key = match prefix {
                    Some(p) => format!("{p}.{name}"),
                    None => name.clone(),
                };
                self.tensor(&key)
                    .cloned()
                    .map(|t| (name, t))
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Parameters::from_named(&self.config, named)
    }

    pub fn model(&self) -> Result<Model> {
        let params = self.params_with_prefix(None)?;
        Model::from_parts(self.config.clone(), Arc::new(self.vocab.clone()), params)
    }

    /// Parameters stored with [`Checkpoint::push_params`].
    pub fn params(&self, prefix: &str) -> Result<Parameters> {
        self.params_with_prefix(Some(prefix))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| TensorEntry { name: n.clone(), shape: t.shape().to_vec() })
                .collect(),
            meta: self.meta.clone(),
        };
        let header = serde_json::to_vec(&header)?;
        let data_len: usize = self.tensors.iter().map(|(_, t)| t.len() * 8).sum();
        let mut out = Vec::with_capacity(20 + header.len() + data_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])?;
        let mut pos = header_end;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let end = pos + n * 8;
            if end > bytes.len() {
                return Err(Error::Checkpoint(format!("truncated data for {}", entry.name)));
            }
            let data = bytes[pos..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            pos = end;
            tensors.push((entry.name, Tensor::new(entry.shape, data)?));
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self { config: header.config, vocab: header.vocab, tensors, meta: header.meta })
    }

    /// Writes to a temporary sibling and renames, so a crash never leaves a
    /// half-written checkpoint under `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    Checkpoint::from_model(model).save(path)
}

pub fn load_model(path: &Path) -> Result<Model> {
    Checkpoint::load(path)?.model()
}
