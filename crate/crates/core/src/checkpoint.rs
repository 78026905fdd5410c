//! Tensor container: `"FSRUCKPT"`, a little-endian u64 header length, a
//! UTF-8 JSON header, then the f64 payloads in little-endian order.
//!
//! The header is `{"arrays": [{"name", "shape", "offset"}...], "config": {...}}`
//! where `offset` counts bytes from the start of the payload section.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::write_atomic;
use crate::config::RunConfig;
use crate::error::{FsruError, Result};
use crate::model::FsruModel;
use crate::params::Parameters;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FSRUCKPT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    arrays: Vec<ArrayEntry>,
    #[serde(default)]
    config: Option<RunConfig>,
}

/// Named arrays plus the optional run configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arrays: Vec<(String, Tensor)>,
    pub config: Option<RunConfig>,
}

impl Checkpoint {
    pub fn from_model(model: &FsruModel) -> Self {
        Self {
            arrays: model
                .named()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
            config: Some(model.config.clone()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let arrays = self
            .arrays
            .iter()
            .map(|(name, t)| {
                let e = ArrayEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += 8 * t.len() as u64;
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            arrays,
            config: self.config.clone(),
        })
        .expect("header serialises");
        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.arrays {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| FsruError::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing FSRUCKPT magic"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("header length exceeds file size"))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| FsruError::Checkpoint(format!("header: {e}")))?;
        let payload = &bytes[header_end..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let count: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 8 * count;
            if end > payload.len() {
                return Err(FsruError::Checkpoint(format!("array `{}` runs past the payload", e.name)));
            }
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            arrays.push((e.name, Tensor::new(&e.shape, data)?));
        }
        Ok(Self {
            arrays,
            config: header.config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| FsruError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Copies every array into `model`, checking names and shapes.
    pub fn restore_into(&self, model: &mut FsruModel) -> Result<()> {
        for (name, target) in model.named_mut() {
            let (_, source) = self
                .arrays
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| FsruError::MissingArray(name.clone()))?;
            if source.shape() != target.shape() {
                return Err(FsruError::ArrayShape {
                    name,
                    expected: target.shape().to_vec(),
                    found: source.shape().to_vec(),
                });
            }
            target.data_mut().copy_from_slice(source.data());
        }
        Ok(())
    }

    /// Rebuilds the model described by the embedded configuration.
    pub fn into_model(&self, fallback: Option<&RunConfig>) -> Result<FsruModel> {
        let config = self
            .config
            .as_ref()
            .or(fallback)
            .ok_or_else(|| FsruError::Checkpoint("no configuration stored or supplied".into()))?;
        let mut model = FsruModel::new(config)?;
        self.restore_into(&mut model)?;
        Ok(model)
    }
}
