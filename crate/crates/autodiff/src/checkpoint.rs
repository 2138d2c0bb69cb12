//! Parameter checkpoints: `<base>.bin` holds every array as little-endian
//! `f32`, `<base>.json` indexes it and carries an arbitrary config value.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub offset: usize,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index {
    /// Parameter names in registration order.
    pub order: Vec<String>,
    pub tensors: BTreeMap<String, Entry>,
    #[serde(default)]
    pub config: serde_json::Value,
}

pub fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("bin"), base.with_extension("json"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save<T: Real>(store: &ParamStore<T>, base: &Path, config: serde_json::Value) -> Result<()> {
    let mut bytes = Vec::with_capacity(store.num_scalars() * 4);
    let mut index = Index {
        order: Vec::new(),
        tensors: BTreeMap::new(),
        config,
    };
    for (_, name, value) in store.iter() {
        index.order.push(name.to_string());
        index.tensors.insert(
            name.to_string(),
            Entry {
                offset: bytes.len() / 4,
                shape: value.shape().to_vec(),
                dtype: "f32".into(),
            },
        );
        for &v in value.data() {
            bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let (bin, json) = paths(base);
    if let Some(dir) = bin.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_atomic(&bin, &bytes)?;
    let text = serde_json::to_vec_pretty(&index).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    write_atomic(&json, &text)
}

pub fn read_index(base: &Path) -> Result<Index> {
    let (_, json) = paths(base);
    let text = fs::read(&json)?;
    serde_json::from_slice(&text)
        .map_err(|e| NnError::Checkpoint(format!("{}: {e}", json.display())))
}

/// Loads every array into a fresh store, preserving registration order.
pub fn load<T: Real>(base: &Path) -> Result<(ParamStore<T>, serde_json::Value)> {
    let index = read_index(base)?;
    let (bin, _) = paths(base);
    let bytes = fs::read(&bin)?;
    if bytes.len() % 4 != 0 {
        return Err(NnError::Checkpoint(format!("{}: truncated", bin.display())));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut store = ParamStore::new();
    for name in &index.order {
        let e = index
            .tensors
            .get(name)
            .ok_or_else(|| NnError::Checkpoint(format!("index lacks {name:?}")))?;
        if e.dtype != "f32" {
            return Err(NnError::Checkpoint(format!(
                "{name:?}: unsupported dtype {}",
                e.dtype
            )));
        }
        let n: usize = e.shape.iter().product();
        let slice = floats
            .get(e.offset..e.offset + n)
            .ok_or_else(|| NnError::Checkpoint(format!("{name:?} lies outside the data file")))?;
        let data = slice.iter().map(|&v| T::of(v as f64)).collect();
        store.register(name.clone(), Tensor::new(&e.shape, data)?)?;
    }
    Ok((store, index.config))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_for_f32() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ck");
        let mut s = ParamStore::<f32>::new();
        s.register("b", Tensor::new(&[2], vec![1.5, -2.25]).unwrap())
            .unwrap();
        s.register("a", Tensor::from_fn(&[2, 3], |i| i as f32 * 0.1))
            .unwrap();
        save(&s, &base, serde_json::json!({"k": 3})).unwrap();
        let (back, cfg) = load::<f32>(&base).unwrap();
        assert_eq!(cfg["k"], 3);
        let names: Vec<_> = back.iter().map(|(_, n, _)| n.to_string()).collect();
        assert_eq!(names, ["b", "a"]);
        for ((_, _, x), (_, _, y)) in s.iter().zip(back.iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn truncated_data_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ck");
        let mut s = ParamStore::<f32>::new();
        s.register("a", Tensor::zeros(&[8])).unwrap();
        save(&s, &base, serde_json::Value::Null).unwrap();
        let (bin, _) = paths(&base);
        fs::write(&bin, [0u8; 12]).unwrap();
        assert!(load::<f32>(&base).is_err());
    }
}
