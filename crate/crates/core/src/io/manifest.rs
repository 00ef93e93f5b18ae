//! Dataset manifests: a JSON array of sample records tying image files,
//! category ids, and optional voxel/feature tensor files to train/test splits.
//!
//! Record paths are stored relative to the manifest file; they are resolved
//! and checked for existence at load time.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub image: PathBuf,
    pub category: usize,
    pub voxels: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    /// Directory the manifest was loaded from (or will be written to);
    /// record paths resolve against it.
    pub root: PathBuf,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn num_categories(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.category + 1)
            .max()
            .unwrap_or(0)
    }

    /// Check every record against a declared category count.
    pub fn validate_categories(&self, count: usize) -> Result<()> {
        for r in &self.records {
            if r.category >= count {
                return Err(Error::CategoryOutOfRange {
                    id: r.category,
                    count,
                });
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn categories(&self) -> Vec<usize> {
        let mut cats: Vec<usize> = self.records.iter().map(|r| r.category).collect();
        cats.sort_unstable();
        cats.dedup();
        cats
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let values: Vec<serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| Error::MalformedEntry {
            index: 0,
            reason: format!("top-level document must be a JSON array: {e}"),
        })?;

    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let mut records = Vec::with_capacity(values.len());
    for (index, v) in values.into_iter().enumerate() {
        let rec: SampleRecord =
            serde_json::from_value(v).map_err(|e| Error::MalformedEntry {
                index,
                reason: e.to_string(),
            })?;
        records.push(rec);
    }

    let manifest = DatasetManifest {
        root,
        records,
    };

    for r in &manifest.records {
        for p in [Some(&r.image), r.voxels.as_ref(), r.features.as_ref()]
            .into_iter()
            .flatten()
        {
            let abs = manifest.resolve(p);
            if !abs.exists() {
                return Err(Error::DanglingPath(abs));
            }
        }
    }
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(&manifest.records)?;
    std::fs::write(path, json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(p: &Path) {
        std::fs::write(p, b"x").unwrap();
    }

    #[test]
    fn empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(&p, "[]").unwrap();
        let m = load_manifest(&p).unwrap();
        assert!(m.records.is_empty());
        assert_eq!(m.num_categories(), 0);
    }

    #[test]
    fn split_counting() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("a.png"));
        touch(&dir.path().join("b.png"));
        let p = dir.path().join("m.json");
        std::fs::write(
            &p,
            r#"[
              {"image":"a.png","category":0,"voxels":null,"features":null,"split":"train"},
              {"image":"b.png","category":1,"voxels":null,"features":null,"split":"test"}
            ]"#,
        )
        .unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.split_indices(Split::Train).len(), 1);
        assert_eq!(m.split_indices(Split::Test).len(), 1);
        assert_eq!(m.num_categories(), 2);
    }

    #[test]
    fn bad_split_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("a.png"));
        let p = dir.path().join("m.json");
        std::fs::write(
            &p,
            r#"[{"image":"a.png","category":0,"voxels":null,"features":null,"split":"validation"}]"#,
        )
        .unwrap();
        assert!(matches!(
            load_manifest(&p),
            Err(Error::MalformedEntry { index: 0, .. })
        ));
    }

    #[test]
    fn unknown_key_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(
            &p,
            r#"[{"image":"a.png","category":0,"voxels":null,"features":null,"split":"train","extra":1}]"#,
        )
        .unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::MalformedEntry { .. })));
    }

    #[test]
    fn dangling_path_fails() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(
            &p,
            r#"[{"image":"missing.png","category":0,"voxels":null,"features":null,"split":"train"}]"#,
        )
        .unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::DanglingPath(_))));
    }

    #[test]
    fn category_validation() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("a.png"));
        let p = dir.path().join("m.json");
        std::fs::write(
            &p,
            r#"[{"image":"a.png","category":3,"voxels":null,"features":null,"split":"train"}]"#,
        )
        .unwrap();
        let m = load_manifest(&p).unwrap();
        assert!(m.validate_categories(4).is_ok());
        assert!(matches!(
            m.validate_categories(3),
            Err(Error::CategoryOutOfRange { id: 3, count: 3 })
        ));
    }

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("a.png"));
        let m = DatasetManifest {
            root: dir.path().to_path_buf(),
            records: vec![SampleRecord {
                image: "a.png".into(),
                category: 0,
                voxels: None,
                features: None,
                split: Split::Train,
            }],
        };
        let p = dir.path().join("m.json");
        save_manifest(&m, &p).unwrap();
        let back = load_manifest(&p).unwrap();
        assert_eq!(back.records.len(), 1);
        assert_eq!(back.records[0].category, 0);
        assert_eq!(back.records[0].split, Split::Train);
    }
}
