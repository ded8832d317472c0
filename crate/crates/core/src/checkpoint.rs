//! On-disk parameter format.
//!
//! A checkpoint is a directory holding `manifest.json` and `tensors.bin`.
//! The manifest lists every named tensor with its shape and byte offset into
//! the blob, which stores the values as little-endian `f64` in manifest
//! order. Free-form metadata (architecture, optimizer and RNG state, ...)
//! sits alongside the tensor table.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "tensors.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub version: u32,
    pub blob_bytes: u64,
    pub metadata: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn save(
    dir: &Path,
    kind: &str,
    metadata: serde_json::Value,
    tensors: &[(String, &Tensor)],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: blob.len() as u64,
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        kind: kind.to_string(),
        version: FORMAT_VERSION,
        blob_bytes: blob.len() as u64,
        metadata,
        tensors: entries,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    let bpath = dir.join(BLOB_FILE);
    fs::write(&bpath, blob).map_err(|e| Error::io(&bpath, e))
}

/// Named tensors read back from a checkpoint, in manifest order.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub manifest: Manifest,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn load(dir: &Path) -> Result<Loaded> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            manifest.version
        )));
    }
    let bpath = dir.join(BLOB_FILE);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    if blob.len() as u64 != manifest.blob_bytes {
        return Err(Error::Checkpoint(format!(
            "blob length mismatch: {} has {} bytes, manifest expects {}",
            bpath.display(),
            blob.len(),
            manifest.blob_bytes
        )));
    }
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let numel: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + numel * 8;
        if end > blob.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} needs bytes {start}..{end} but blob has {} bytes",
                e.name,
                blob.len()
            )));
        }
        let data = blob[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
    }
    Ok(Loaded { manifest, tensors })
}

impl Loaded {
    /// Removes and returns tensors whose names start with `prefix`, with the
    /// prefix stripped, checking each against `expected` (name, shape).
    pub fn take_group(&self, prefix: &str, expected: &[(String, Vec<usize>)]) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(expected.len());
        let mut problems = Vec::new();
        for (name, shape) in expected {
            let full = format!("{prefix}{name}");
            match self.tensors.iter().find(|(n, _)| *n == full) {
                None => problems.push(format!("{full}: missing")),
                Some((_, t)) if t.shape() != shape.as_slice() => problems.push(format!(
                    "{full}: shape {:?}, expected {:?}",
                    t.shape(),
                    shape
                )),
                Some((_, t)) => out.push(t.clone()),
            }
        }
        let group = self.tensors.iter().filter(|(n, _)| n.starts_with(prefix)).count();
        if group > expected.len() {
            problems.push(format!(
                "{} unexpected tensors under {prefix:?}",
                group - expected.len()
            ));
        }
        if !problems.is_empty() {
            return Err(Error::Checkpoint(problems.join("; ")));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::matrix(2, 2, vec![1.0, -0.5, 3.25, f64::MIN_POSITIVE]).unwrap();
        let b = Tensor::vector(vec![7.0]);
        let meta = serde_json::json!({"hello": 1});
        save(dir.path(), "test", meta.clone(), &[("a".into(), &a), ("b".into(), &b)]).unwrap();
        let loaded = load(dir.path()).unwrap();
        assert_eq!(loaded.manifest.metadata, meta);
        assert_eq!(loaded.tensors[0].1, a);
        assert_eq!(loaded.tensors[1].1, b);

        let blob = dir.path().join(BLOB_FILE);
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 3]).unwrap();
        let err = load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("length"), "{err}");
    }

    #[test]
    fn group_validation_names_offender() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::zeros(&[2, 3]);
        save(dir.path(), "t", serde_json::Value::Null, &[("net/a".into(), &a)]).unwrap();
        let loaded = load(dir.path()).unwrap();
        let err = loaded
            .take_group("net/", &[("a".into(), vec![3, 2])])
            .unwrap_err()
            .to_string();
        assert!(err.contains("net/a"), "{err}");
    }
}
