//! On-disk parameter checkpoints.
//!
//! Layout: `manifest.json` plus one flat little-endian `<name>.bin` per
//! parameter. The manifest records names, shapes, the dtype tag and a format
//! version, and carries an opaque `model` object for the owner's metadata.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub dtype: String,
    pub parameters: Vec<ParamEntry>,
    #[serde(default)]
    pub model: serde_json::Value,
}

fn file_name(param: &str) -> String {
    format!("{param}.bin")
}

pub fn save_checkpoint<T: Scalar>(store: &ParamStore<T>, dir: &Path, model: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut parameters = Vec::with_capacity(store.len());
    for (_, p) in store.iter() {
        let file = file_name(&p.name);
        let mut bytes = Vec::with_capacity(p.value.numel() * T::BYTES);
        for &x in p.value.data() {
            x.write_le(&mut bytes);
        }
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        parameters.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        dtype: T::DTYPE.to_string(),
        parameters,
        model,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path,
        line: 1,
        source: e,
    })?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

/// Overwrites the values in `store` from `dir`; every stored parameter must be
/// present with a matching shape and dtype.
pub fn load_checkpoint<T: Scalar>(store: &mut ParamStore<T>, dir: &Path) -> Result<CheckpointManifest> {
    let manifest = read_manifest(dir)?;
    if manifest.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "dtype {} does not match {}",
            manifest.dtype,
            T::DTYPE
        )));
    }
    for entry in &manifest.parameters {
        let id = store.id(&entry.name)?;
        let expected = store.value(id).shape().to_vec();
        if expected != entry.shape {
            return Err(Error::Checkpoint(format!(
                "`{}` has shape {:?}, model expects {:?}",
                entry.name, entry.shape, expected
            )));
        }
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let n: usize = entry.shape.iter().product();
        if bytes.len() != n * T::BYTES {
            return Err(Error::Checkpoint(format!(
                "`{}`: {} bytes for {} values",
                entry.name,
                bytes.len(),
                n
            )));
        }
        let data = bytes.chunks_exact(T::BYTES).map(T::read_le).collect();
        store.get_mut(id).value = Tensor::new(entry.shape.clone(), data)?;
    }
    if manifest.parameters.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, model has {}",
            manifest.parameters.len(),
            store.len()
        )));
    }
    Ok(manifest)
}
