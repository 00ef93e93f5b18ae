//! Checkpoints: one DCTF file per named parameter plus a JSON index mapping
//! layer names to files and shapes, with free-form metadata.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::dctf;
use crate::tensor::TensorF32;

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    file: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Index {
    params: BTreeMap<String, IndexEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Write named tensors under `dir` (created if needed) with an `index.json`.
pub fn save(
    dir: impl AsRef<Path>,
    params: &[(String, &TensorF32)],
    meta: serde_json::Value,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut index = Index {
        params: BTreeMap::new(),
        meta,
    };
    for (name, t) in params {
        let file = format!("{}.dctf", name.replace(['/', '\\'], "_"));
        dctf::write_tensor(t, dir.join(&file))?;
        index.params.insert(
            name.clone(),
            IndexEntry {
                file,
                shape: t.dims().to_vec(),
            },
        );
    }
    let json = serde_json::to_string_pretty(&index)?;
    std::fs::write(dir.join("index.json"), json)?;
    Ok(())
}

pub struct Checkpoint {
    pub dir: PathBuf,
    pub tensors: BTreeMap<String, TensorF32>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn take(&mut self, name: &str) -> Result<TensorF32> {
        self.tensors.remove(name).ok_or_else(|| Error::BadCheckpoint {
            path: self.dir.clone(),
            reason: format!("missing parameter {name}"),
        })
    }
}

pub fn load(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let text = std::fs::read_to_string(dir.join("index.json"))?;
    let index: Index = serde_json::from_str(&text).map_err(|e| Error::BadCheckpoint {
        path: dir.to_path_buf(),
        reason: format!("index.json: {e}"),
    })?;
    let mut tensors = BTreeMap::new();
    for (name, entry) in index.params {
        let t = dctf::read_tensor(dir.join(&entry.file))?;
        if t.dims() != entry.shape.as_slice() {
            return Err(Error::BadCheckpoint {
                path: dir.to_path_buf(),
                reason: format!(
                    "parameter {name}: index shape {:?} != file shape {:?}",
                    entry.shape,
                    t.dims()
                ),
            });
        }
        tensors.insert(name, t);
    }
    Ok(Checkpoint {
        dir: dir.to_path_buf(),
        tensors,
        meta: index.meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let w = TensorF32::from_fn(&[2, 3], |i| i as f32);
        let b = TensorF32::from_fn(&[3], |i| -(i as f32));
        save(
            dir.path(),
            &[("fc.weight".into(), &w), ("fc.bias".into(), &b)],
            serde_json::json!({"step": 7}),
        )
        .unwrap();
        let mut ck = load(dir.path()).unwrap();
        assert_eq!(ck.meta["step"], 7);
        assert_eq!(ck.take("fc.weight").unwrap(), w);
        assert_eq!(ck.take("fc.bias").unwrap(), b);
        assert!(ck.take("fc.weight").is_err());
    }

    #[test]
    fn shape_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let w = TensorF32::zeros(&[2, 2]);
        save(dir.path(), &[("w".into(), &w)], serde_json::Value::Null).unwrap();
        // overwrite the tensor file with different dims
        dctf::write_tensor(&TensorF32::zeros(&[3]), dir.path().join("w.dctf")).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::BadCheckpoint { .. })));
    }
}
