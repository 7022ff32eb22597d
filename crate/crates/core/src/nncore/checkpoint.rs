//! Checkpoint container: a JSON manifest describing parameter names, shapes
//! and byte offsets, next to a flat little-endian f64 blob.
//!
//! A checkpoint `stem` expands to `<stem>.json` + `<stem>.bin`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::init::{HasParams, Parameter};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob, in bytes.
    offset: u64,
    /// Element count.
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dtype: String,
    blob: String,
    params: Vec<ManifestEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

pub fn manifest_path(stem: &Path) -> PathBuf {
    let mut os = stem.as_os_str().to_os_string();
    os.push(".json");
    PathBuf::from(os)
}

pub fn blob_path(stem: &Path) -> PathBuf {
    let mut os = stem.as_os_str().to_os_string();
    os.push(".bin");
    PathBuf::from(os)
}

/// Writes every parameter of `model` plus free-form metadata.
pub fn save(stem: &Path, model: &dyn HasParams, meta: &serde_json::Value) -> Result<()> {
    let params = model.parameters();
    save_params(stem, &params, meta)
}

pub fn save_params(stem: &Path, params: &[&Parameter], meta: &serde_json::Value) -> Result<()> {
    let mut entries = Vec::with_capacity(params.len());
    let mut blob: Vec<u8> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for p in params {
        if !seen.insert(p.name.clone()) {
            return Err(Error::Checkpoint(format!(
                "duplicate parameter name {}",
                p.name
            )));
        }
        entries.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.shape().to_vec(),
            offset: blob.len() as u64,
            len: p.tensor.numel(),
        });
        for v in p.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        dtype: "f64le".to_string(),
        blob: blob_path(stem)
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        params: entries,
        meta: meta.clone(),
    };
    if let Some(dir) = stem.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(manifest_path(stem), serde_json::to_vec_pretty(&manifest)?)?;
    fs::write(blob_path(stem), blob)?;
    Ok(())
}

pub struct LoadedCheckpoint {
    pub tensors: HashMap<String, (Vec<usize>, Vec<f64>)>,
    pub meta: serde_json::Value,
}

pub fn load(stem: &Path) -> Result<LoadedCheckpoint> {
    let mpath = manifest_path(stem);
    let manifest: Manifest = serde_json::from_slice(&fs::read(&mpath).map_err(|e| {
        Error::Checkpoint(format!("cannot read {}: {e}", mpath.display()))
    })?)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            manifest.version
        )));
    }
    if manifest.dtype != "f64le" {
        return Err(Error::Checkpoint(format!(
            "unsupported dtype {}",
            manifest.dtype
        )));
    }
    let blob = fs::read(blob_path(stem))?;
    let mut tensors = HashMap::new();
    for e in &manifest.params {
        let start = e.offset as usize;
        let nbytes = e.len * 8;
        if start + nbytes > blob.len() {
            return Err(Error::Checkpoint(format!(
                "parameter {} overruns blob ({} + {} > {})",
                e.name,
                start,
                nbytes,
                blob.len()
            )));
        }
        if e.shape.iter().product::<usize>() != e.len {
            return Err(Error::Checkpoint(format!(
                "parameter {}: shape {:?} does not match length {}",
                e.name, e.shape, e.len
            )));
        }
        let data: Vec<f64> = blob[start..start + nbytes]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.insert(e.name.clone(), (e.shape.clone(), data));
    }
    Ok(LoadedCheckpoint {
        tensors,
        meta: manifest.meta,
    })
}

/// Installs loaded values into a model. Every model parameter must be present
/// with a matching shape, and every stored tensor must be consumed.
pub fn apply(model: &mut dyn HasParams, mut loaded: LoadedCheckpoint) -> Result<()> {
    let mut failure: Option<Error> = None;
    model.visit_mut(&mut |p| {
        if failure.is_some() {
            return;
        }
        match loaded.tensors.remove(&p.name) {
            None => {
                failure = Some(Error::Checkpoint(format!(
                    "checkpoint is missing parameter {}",
                    p.name
                )));
            }
            Some((shape, data)) => {
                if shape != p.shape() {
                    failure = Some(Error::Checkpoint(format!(
                        "parameter {}: checkpoint shape {:?} vs model shape {:?}",
                        p.name,
                        shape,
                        p.shape()
                    )));
                } else if let Err(e) = p.set_data(data) {
                    failure = Some(e);
                }
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(name) = loaded.tensors.keys().next() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has unknown parameter {name}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::init::InitSpec;
    use crate::nncore::tensor::Tensor;

    struct TwoParams {
        a: Parameter,
        b: Parameter,
    }

    impl HasParams for TwoParams {
        fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter)) {
            f(&self.a);
            f(&self.b);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
            f(&mut self.a);
            f(&mut self.b);
        }
    }

    fn model() -> TwoParams {
        TwoParams {
            a: Parameter::new(
                "m.a",
                Tensor::var(&[2, 2], vec![1.0, -2.0, 0.25, 1e-9]).unwrap(),
                InitSpec::Zeros,
            ),
            b: Parameter::new(
                "m.b",
                Tensor::var(&[3], vec![0.5, 0.5, -0.5]).unwrap(),
                InitSpec::Zeros,
            ),
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        let src = model();
        save(&stem, &src, &serde_json::json!({"k": 1})).unwrap();
        let loaded = load(&stem).unwrap();
        assert_eq!(loaded.meta["k"], 1);
        let mut dst = model();
        dst.a.set_data(vec![9.0; 4]).unwrap();
        apply(&mut dst, loaded).unwrap();
        assert_eq!(dst.a.data(), src.a.data());
        assert_eq!(dst.b.data(), src.b.data());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        save(&stem, &model(), &serde_json::Value::Null).unwrap();
        let loaded = load(&stem).unwrap();
        let mut other = TwoParams {
            a: Parameter::new("m.a", Tensor::var(&[4], vec![0.0; 4]).unwrap(), InitSpec::Zeros),
            b: Parameter::new("m.b", Tensor::var(&[3], vec![0.0; 3]).unwrap(), InitSpec::Zeros),
        };
        assert!(apply(&mut other, loaded).is_err());
    }

    #[test]
    fn missing_parameter_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        save(&stem, &model(), &serde_json::Value::Null).unwrap();
        let mut loaded = load(&stem).unwrap();
        loaded.tensors.remove("m.b");
        let mut dst = model();
        assert!(apply(&mut dst, loaded).is_err());
    }
}
