//! On-disk model files and small JSON helpers.
//!
//! A model file is plain JSON holding the architecture, the raw parameters and
//! free-form metadata. Floats are written with round-trip precision, so a
//! loaded model is bit-identical to the saved one.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Model, NetworkSpec};
use crate::tensor::Tensor;

pub const MODEL_FORMAT: &str = "activemix-model";
pub const MODEL_VERSION: u32 = 1;

/// Serialized form of a [`Model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub spec: NetworkSpec,
    pub seed: u64,
    pub params: Vec<Tensor>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl ModelFile {
    pub fn from_model(model: &Model, meta: BTreeMap<String, serde_json::Value>) -> Self {
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            spec: model.spec().clone(),
            seed: model.seed(),
            params: model.params().to_vec(),
            meta,
        }
    }

    /// Rebuilds the model, re-checking every tensor.
    pub fn into_model(self) -> Result<Model> {
        if self.format != MODEL_FORMAT {
            return Err(Error::format(
                "format",
                format!("expected `{MODEL_FORMAT}`, found `{}`", self.format),
            ));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::format(
                "version",
                format!("unsupported version {}", self.version),
            ));
        }
        let params = self
            .params
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                Tensor::new(t.shape().to_vec(), t.into_values())
                    .map_err(|e| Error::format(format!("params[{i}]"), e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Model::from_parts(self.spec, params, self.seed)
            .map_err(|e| Error::format("params", e.to_string()))
    }
}

/// Deterministic JSON bytes for a model.
pub fn model_bytes(model: &Model, meta: BTreeMap<String, serde_json::Value>) -> Vec<u8> {
    serde_json::to_vec(&ModelFile::from_model(model, meta)).expect("model serializes")
}

/// Short content hash of a model's architecture and parameters (metadata excluded).
pub fn model_id(model: &Model) -> String {
    let digest = Sha256::digest(model_bytes(model, BTreeMap::new()));
    hex::encode(&digest[..8])
}

pub fn save_model(
    model: &Model,
    meta: BTreeMap<String, serde_json::Value>,
    path: &Path,
) -> Result<()> {
    write_atomic(path, &model_bytes(model, meta))
}

pub fn load_model(path: &Path) -> Result<(Model, BTreeMap<String, serde_json::Value>)> {
    let file: ModelFile = read_json(path)?;
    let meta = file.meta.clone();
    let model = file.into_model().map_err(|e| match e {
        Error::Format { field, detail } => {
            Error::format(format!("{}:{field}", path.display()), detail)
        }
        other => other,
    })?;
    Ok((model, meta))
}

/// Writes through a sibling temp file and renames, so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::logic(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Reads JSON; parse failures become format errors naming the file (and field, when serde knows it).
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}
