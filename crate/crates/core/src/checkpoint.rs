//! On-disk checkpoints: one little-endian `f32` file per named tensor plus a
//! `manifest.json` holding names, shapes, dtype, training step and the hash
//! of the run configuration.
//!
//! A checkpoint is written to a sibling staging directory and renamed into
//! place, so an interrupted save never clobbers the previous good one.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
const DTYPE: &str = "f32le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Which network the tensors belong to (`lcdn`, `lgdm`, `lgdm-ema`).
    pub kind: String,
    pub step: usize,
    pub config_hash: String,
    /// Free-form model configuration needed to rebuild the network.
    #[serde(default)]
    pub model: serde_json::Value,
}

impl CheckpointMeta {
    pub fn new(kind: &str, step: usize, config_hash: &str) -> Self {
        Self {
            kind: kind.to_string(),
            step,
            config_hash: config_hash.to_string(),
            model: serde_json::Value::Null,
        }
    }

    pub fn with_model(mut self, model: serde_json::Value) -> Self {
        self.model = model;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    #[serde(flatten)]
    pub meta: CheckpointMeta,
    pub tensors: Vec<TensorEntry>,
}

fn staging_path(dir: &Path) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    dir.with_file_name(name)
}

/// Writes `params` as a checkpoint directory at `dir`, replacing any
/// previous checkpoint there once the new one is complete.
pub fn save(dir: &Path, params: &ParamStore<f32>, meta: &CheckpointMeta) -> Result<()> {
    let stage = staging_path(dir);
    if stage.exists() {
        fs::remove_dir_all(&stage).map_err(|e| Error::io(&stage, e))?;
    }
    fs::create_dir_all(&stage).map_err(|e| Error::io(&stage, e))?;
    let mut tensors = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        let file = format!("{name}.bin");
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = stage.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        tensors.push(TensorEntry {
            name: name.clone(),
            file,
            shape: t.shape().to_vec(),
            dtype: DTYPE.to_string(),
        });
    }
    let manifest = Manifest {
        version: 1,
        meta: meta.clone(),
        tensors,
    };
    let path = stage.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&stage, dir).map_err(|e| Error::io(dir, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::Missing(format!("no checkpoint at {}", dir.display())));
    }
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&text)?)
}

/// Loads every tensor listed in the manifest.
pub fn load(dir: &Path) -> Result<(ParamStore<f32>, Manifest)> {
    let manifest = read_manifest(dir)?;
    let mut store = ParamStore::new();
    for e in &manifest.tensors {
        ensure!(e.dtype == DTYPE, InvalidArgument, "tensor {} has dtype {}", e.name, e.dtype);
        let path = dir.join(&e.file);
        let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
        let n: usize = e.shape.iter().product();
        ensure!(
            bytes.len() == 4 * n,
            Shape,
            "{} holds {} bytes, shape {:?} needs {}",
            path.display(),
            bytes.len(),
            e.shape,
            4 * n
        );
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert(e.name.clone(), Tensor::new(&e.shape, data));
    }
    Ok((store, manifest))
}
