//! Checkpoint files.
//!
//! Layout: the line `densecap-checkpoint v1`, then a one-line JSON manifest
//! listing every tensor (name, shape, dtype, byte offset, element count) in
//! lexicographic name order plus free-form string metadata, then a single
//! blob of little-endian `f64` values in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &str = "densecap-checkpoint v1";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode(store: &ParamStore, meta: &BTreeMap<String, String>) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut blob = Vec::new();
    for (name, p) in store.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: p.value.shape().to_vec(),
            dtype: "f64".to_string(),
            offset: blob.len(),
            len: p.value.len(),
        });
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        meta: meta.clone(),
        tensors,
    };
    let mut out = Vec::with_capacity(blob.len() + 256);
    out.extend_from_slice(MAGIC.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(serde_json::to_string(&manifest).expect("manifest serializes").as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&blob);
    out
}

pub fn decode(bytes: &[u8]) -> Result<(ParamStore, BTreeMap<String, String>)> {
    let bad = |m: &str| NnError::Checkpoint(m.to_string());
    let nl1 = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line"))?;
    if &bytes[..nl1] != MAGIC.as_bytes() {
        return Err(bad("unrecognized header or version"));
    }
    let rest = &bytes[nl1 + 1..];
    let nl2 = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing manifest"))?;
    let manifest: Manifest = serde_json::from_slice(&rest[..nl2])
        .map_err(|e| NnError::Checkpoint(format!("manifest: {e}")))?;
    let blob = &rest[nl2 + 1..];
    let mut store = ParamStore::new();
    let mut expected_offset = 0;
    for t in &manifest.tensors {
        if t.dtype != "f64" {
            return Err(NnError::Checkpoint(format!("{}: unsupported dtype {}", t.name, t.dtype)));
        }
        if t.offset != expected_offset {
            return Err(NnError::Checkpoint(format!("{}: offset out of order", t.name)));
        }
        let end = t.offset + 8 * t.len;
        if end > blob.len() {
            return Err(NnError::Checkpoint(format!("{}: blob truncated", t.name)));
        }
        let data = blob[t.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.insert(&t.name, Tensor::new(t.shape.clone(), data)?)?;
        expected_offset = end;
    }
    if expected_offset != blob.len() {
        return Err(bad("trailing bytes after last tensor"));
    }
    Ok((store, manifest.meta))
}

pub fn save(path: &Path, store: &ParamStore, meta: &BTreeMap<String, String>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(store, meta))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, BTreeMap<String, String>)> {
    decode(&fs::read(path)?)
}
