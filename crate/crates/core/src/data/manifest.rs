use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::features::{self, FeatureFile, FeatureFileError, FeatureHeader, HEADER_LEN};
use crate::video::FeatureRecord;
use crate::ClassId;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed manifest {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("unsupported manifest version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("feature file {path}: {source}")]
    Features { path: PathBuf, source: FeatureFileError },
    #[error("manifest integrity: {0}")]
    Integrity(String),
}

impl DatasetError {
    /// The underlying feature-file error, if any.
    pub fn feature_error(&self) -> Option<&FeatureFileError> {
        match self {
            Self::Features { source, .. } => Some(source),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    /// Byte offset of the record inside the feature file.
    pub offset: u64,
    pub label: Option<ClassId>,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    /// Relative to the manifest's directory.
    pub feature_file: String,
    pub st_dim: usize,
    pub frames: usize,
    pub vocab: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub entries: Vec<ManifestEntry>,
}

/// A manifest together with its decoded feature records, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub records: Vec<FeatureRecord>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Dataset {
    /// Writes `<manifest_path>` and a sibling `<stem>.feat` file. `splits[i]`
    /// tags `records[i]`.
    pub fn write(
        manifest_path: &Path,
        records: &[FeatureRecord],
        splits: &[String],
        dims: (usize, usize, usize),
        config_hash: Option<String>,
    ) -> Result<Manifest, DatasetError> {
        if splits.len() != records.len() {
            return Err(DatasetError::Integrity(format!(
                "{} split tags for {} records",
                splits.len(),
                records.len()
            )));
        }
        let (st_dim, frames, vocab) = dims;
        let stem = manifest_path.file_stem().and_then(|s| s.to_str()).unwrap_or("features");
        let feature_name = format!("{stem}.feat");
        let feature_path = manifest_path.with_file_name(&feature_name);
        let header = features::write_features(&feature_path, records, st_dim, frames, vocab).map_err(|source| {
            DatasetError::Features {
                path: feature_path.clone(),
                source,
            }
        })?;
        let rec_len = header.record_len() as u64;
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            feature_file: feature_name,
            st_dim,
            frames,
            vocab,
            config_hash,
            entries: records
                .iter()
                .zip(splits)
                .enumerate()
                .map(|(i, (r, s))| ManifestEntry {
                    video_id: r.video_id.clone(),
                    offset: HEADER_LEN as u64 + i as u64 * rec_len,
                    label: r.label,
                    split: s.clone(),
                })
                .collect(),
        };
        write_manifest(manifest_path, &manifest)?;
        Ok(manifest)
    }

    /// Loads and cross-checks a manifest against its feature file.
    pub fn load(manifest_path: &Path) -> Result<Self, DatasetError> {
        let manifest = load_manifest(manifest_path)?;
        let feature_path = manifest_path.with_file_name(&manifest.feature_file);
        let file = FeatureFile::read(&feature_path).map_err(|source| DatasetError::Features {
            path: feature_path.clone(),
            source,
        })?;
        let records = resolve(&manifest, file)?;
        Ok(Self { manifest, records })
    }

    pub fn split_names(&self) -> BTreeSet<&str> {
        self.manifest.entries.iter().map(|e| e.split.as_str()).collect()
    }

    /// Records tagged `split`.
    pub fn split(&self, split: &str) -> Vec<&FeatureRecord> {
        self.manifest
            .entries
            .iter()
            .zip(&self.records)
            .filter(|(e, _)| e.split == split)
            .map(|(_, r)| r)
            .collect()
    }

    /// Records whose label is in `classes`, regardless of split tag.
    pub fn with_labels(&self, classes: &BTreeSet<ClassId>) -> Vec<&FeatureRecord> {
        self.records
            .iter()
            .filter(|r| r.label.is_some_and(|l| classes.contains(&l)))
            .collect()
    }
}

fn resolve(manifest: &Manifest, file: FeatureFile) -> Result<Vec<FeatureRecord>, DatasetError> {
    let h: FeatureHeader = file.header;
    if (h.st_dim as usize, h.frames as usize, h.vocab as usize) != (manifest.st_dim, manifest.frames, manifest.vocab) {
        return Err(DatasetError::Integrity(format!(
            "manifest dims ({}, {}, {}) differ from feature file ({}, {}, {})",
            manifest.st_dim, manifest.frames, manifest.vocab, h.st_dim, h.frames, h.vocab
        )));
    }
    let rec_len = h.record_len() as u64;
    let by_index: BTreeMap<u64, &FeatureRecord> = file.records.iter().enumerate().map(|(i, r)| (i as u64, r)).collect();
    manifest
        .entries
        .iter()
        .map(|e| {
            let rel = e.offset.checked_sub(HEADER_LEN as u64).filter(|r| r % rec_len == 0);
            let rec = rel.and_then(|r| by_index.get(&(r / rec_len))).ok_or_else(|| {
                DatasetError::Integrity(format!(
                    "offset {} of {} does not address a record",
                    e.offset, e.video_id
                ))
            })?;
            if rec.video_id != e.video_id || rec.label != e.label {
                return Err(DatasetError::Integrity(format!(
                    "offset {} holds {} (label {:?}), manifest says {} (label {:?})",
                    e.offset, rec.video_id, rec.label, e.video_id, e.label
                )));
            }
            Ok((*rec).clone())
        })
        .collect()
}

pub fn load_manifest(path: &Path) -> Result<Manifest, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    // check the version before the full schema so old files get a clear error
    let probe: serde_json::Value = serde_json::from_str(&text).map_err(|source| DatasetError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let found = probe.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != MANIFEST_VERSION {
        return Err(DatasetError::VersionMismatch {
            found,
            expected: MANIFEST_VERSION,
        });
    }
    serde_json::from_value(probe).map_err(|source| DatasetError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<(), DatasetError> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn rec(id: &str, label: u32) -> FeatureRecord {
        FeatureRecord {
            video_id: id.into(),
            st_feature: DVector::from_element(2, label as f64),
            frame_object_probs: DMatrix::from_element(1, 3, 0.5),
            label: Some(label),
        }
    }

    #[test]
    fn offsets_resolve_and_splits_filter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.json");
        let recs = vec![rec("a", 0), rec("b", 1), rec("c", 2)];
        let tags = vec!["train".to_string(), "test".into(), "train".into()];
        Dataset::write(&path, &recs, &tags, (2, 1, 3), Some("abc".into())).unwrap();
        let ds = Dataset::load(&path).unwrap();
        assert_eq!(ds.records, recs);
        assert_eq!(ds.split("train").len(), 2);
        assert_eq!(ds.with_labels(&[1, 2].into()).len(), 2);
        assert_eq!(ds.manifest.config_hash.as_deref(), Some("abc"));
    }

    #[test]
    fn mismatched_entry_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.json");
        let mut m = Dataset::write(
            &path,
            &[rec("a", 0), rec("b", 1)],
            &["t".into(), "t".into()],
            (2, 1, 3),
            None,
        )
        .unwrap();
        m.entries[0].video_id = "b".into();
        write_manifest(&path, &m).unwrap();
        assert!(matches!(Dataset::load(&path), Err(DatasetError::Integrity(_))));
        m.entries[0].video_id = "a".into();
        m.entries[0].offset += 1;
        write_manifest(&path, &m).unwrap();
        assert!(matches!(Dataset::load(&path), Err(DatasetError::Integrity(_))));
    }

    #[test]
    fn manifest_version_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.json");
        let mut m = Dataset::write(&path, &[], &[], (2, 1, 3), None).unwrap();
        m.version = 7;
        write_manifest(&path, &m).unwrap();
        assert!(matches!(
            Dataset::load(&path),
            Err(DatasetError::VersionMismatch { found: 7, expected: 1 })
        ));
    }
}
