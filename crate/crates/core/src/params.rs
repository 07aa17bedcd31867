//! Named parameter storage, initialization, and the checkpoint format.
//!
//! Checkpoints are a `manifest.json` describing every tensor (name, shape,
//! dtype, byte offset, trainable flag) next to a `params.bin` holding raw
//! little-endian values in row-major order. Optimizer state reuses the same
//! layout under different file names.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct Param<T: Real> {
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

/// Ordered map of named tensors. Iteration order is the sorted name order,
/// which keeps optimizer updates and serialization deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Real> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>, trainable: bool) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::data(format!("duplicate parameter name `{name}`")));
        }
        self.entries
            .insert(name.to_string(), Param { tensor, trainable });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::data(format!("unknown parameter `{name}`")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.get(name)?.tensor)
    }

    /// Replace values; the shape is fixed at insertion time.
    pub fn set_values(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::data(format!("unknown parameter `{name}`")))?;
        if entry.tensor.shape() != tensor.shape() {
            return Err(Error::Shape {
                op: "set_values",
                detail: format!(
                    "parameter `{name}` has shape {:?}, got {:?}",
                    entry.tensor.shape(),
                    tensor.shape()
                ),
            });
        }
        entry.tensor = tensor;
        Ok(())
    }

    /// Copy values from one entry to another (same shape required).
    pub fn copy_values(&mut self, src: &str, dst: &str) -> Result<()> {
        let tensor = self.tensor(src)?.clone();
        self.set_values(dst, tensor)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Total number of scalar values across all entries.
    pub fn value_count(&self) -> usize {
        self.entries.values().map(|p| p.tensor.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let entries = self
            .entries
            .iter()
            .map(|(name, p)| {
                (
                    name.clone(),
                    Param {
                        tensor: p.tensor.cast::<U>(),
                        trainable: p.trainable,
                    },
                )
            })
            .collect();
        ParamStore { entries }
    }

    pub fn save(&self, manifest_path: &Path, bin_path: &Path) -> Result<()> {
        let (manifest, blob) = encode(self)?;
        fs::write(manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
        fs::write(bin_path, blob)?;
        Ok(())
    }

    pub fn load(manifest_path: &Path, bin_path: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
        let blob = fs::read(bin_path)?;
        decode(&manifest, &blob)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
    pub offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub dtype: String,
    pub total_bytes: usize,
    pub tensors: Vec<ManifestEntry>,
}

fn encode<T: Real>(store: &ParamStore<T>) -> Result<(Manifest, Vec<u8>)> {
    let mut tensors = Vec::with_capacity(store.len());
    let mut blob = Vec::with_capacity(store.value_count() * T::BYTE_WIDTH);
    for (name, param) in store.iter() {
        tensors.push(ManifestEntry {
            name: name.to_string(),
            rows: param.tensor.rows(),
            cols: param.tensor.cols(),
            trainable: param.trainable,
            offset: blob.len(),
        });
        for v in param.tensor.iter() {
            blob.extend_from_slice(&v.to_le_bytes_vec());
        }
    }
    Ok((
        Manifest {
            dtype: T::DTYPE.to_string(),
            total_bytes: blob.len(),
            tensors,
        },
        blob,
    ))
}

fn decode<T: Real>(manifest: &Manifest, blob: &[u8]) -> Result<ParamStore<T>> {
    if manifest.dtype != T::DTYPE {
        return Err(Error::format(format!(
            "checkpoint dtype is {}, expected {}",
            manifest.dtype,
            T::DTYPE
        )));
    }
    if blob.len() != manifest.total_bytes {
        return Err(Error::format(format!(
            "checkpoint blob has {} bytes, manifest expects {}",
            blob.len(),
            manifest.total_bytes
        )));
    }
    let mut store = ParamStore::new();
    for entry in &manifest.tensors {
        let count = entry.rows * entry.cols;
        let end = entry.offset + count * T::BYTE_WIDTH;
        if end > blob.len() {
            return Err(Error::format(format!(
                "checkpoint truncated: `{}` needs bytes {}..{} of {}",
                entry.name,
                entry.offset,
                end,
                blob.len()
            )));
        }
        let values: Vec<T> = blob[entry.offset..end]
            .chunks_exact(T::BYTE_WIDTH)
            .map(T::from_le_slice)
            .collect();
        store.insert(
            &entry.name,
            Tensor::from_vec(entry.rows, entry.cols, values)?,
            entry.trainable,
        )?;
    }
    Ok(store)
}

// ---- initialization --------------------------------------------------------

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`. Draws happen in f64 so the
/// stream is identical across precisions for a given rng state.
pub fn xavier_uniform<T: Real>(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let values: Vec<T> = (0..rows * cols)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(rows, cols, values).expect("sized")
}

/// Gaussian entries with the given standard deviation.
pub fn normal_init<T: Real>(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("std > 0");
    let values: Vec<T> = (0..rows * cols)
        .map(|_| T::from_f64(dist.sample(rng)))
        .collect();
    Tensor::from_vec(rows, cols, values).expect("sized")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn insert_rejects_duplicates() {
        let mut store = ParamStore::<f64>::new();
        store.insert("a", Tensor::zeros(1, 1), true).unwrap();
        assert!(store.insert("a", Tensor::zeros(1, 1), true).is_err());
    }

    #[test]
    fn set_values_keeps_shape_immutable() {
        let mut store = ParamStore::<f64>::new();
        store.insert("a", Tensor::zeros(2, 2), true).unwrap();
        assert!(store.set_values("a", Tensor::zeros(2, 3)).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::<f32>::new();
        store
            .insert("w", xavier_uniform(3, 5, &mut rng), true)
            .unwrap();
        store
            .insert("frozen", normal_init(4, 2, 0.02, &mut rng), false)
            .unwrap();

        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.json");
        let bin = dir.path().join("params.bin");
        store.save(&manifest, &bin).unwrap();
        let loaded = ParamStore::<f32>::load(&manifest, &bin).unwrap();

        for (name, param) in store.iter() {
            let other = loaded.get(name).unwrap();
            assert_eq!(param.trainable, other.trainable);
            assert_eq!(param.tensor, other.tensor);
        }
    }

    #[test]
    fn truncated_blob_is_a_clean_error() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Tensor::ones(2, 2), true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.json");
        let bin = dir.path().join("params.bin");
        store.save(&manifest, &bin).unwrap();
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
        let err = ParamStore::<f64>::load(&manifest, &bin).unwrap_err();
        assert!(err.to_string().contains("manifest expects"));
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let mut store = ParamStore::<f32>::new();
        store.insert("w", Tensor::ones(1, 1), true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.json");
        let bin = dir.path().join("params.bin");
        store.save(&manifest, &bin).unwrap();
        assert!(ParamStore::<f64>::load(&manifest, &bin).is_err());
    }
}
