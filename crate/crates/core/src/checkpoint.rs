//! Checkpoint directories: `manifest.json` plus `tensors.bin` (little-endian `f32`).

use std::fs;
use std::path::Path;

use kgalign_tensor::{ParameterStore, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::model::store::HistoricalEmbeddingStore;
use crate::model::{init_params, GraphPair};
use crate::training::{EpochLosses, TrainConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";
/// Blob entry holding the historical embedding store.
pub const STORE_TENSOR: &str = "store.x0";

/// Digests of the four intern tables a checkpoint was trained against.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InternHashes {
    pub entities_a: String,
    pub entities_b: String,
    pub predicates_a: String,
    pub predicates_b: String,
}

impl InternHashes {
    pub fn of(pair: &GraphPair) -> Self {
        Self {
            entities_a: pair.a.entities().digest(),
            entities_b: pair.b.entities().digest(),
            predicates_a: pair.a.predicates().digest(),
            predicates_b: pair.b.predicates().digest(),
        }
    }

    /// Name of the first table that differs.
    pub fn first_difference(&self, other: &Self) -> Option<&'static str> {
        [
            ("entities_a", &self.entities_a, &other.entities_a),
            ("entities_b", &self.entities_b, &other.entities_b),
            ("predicates_a", &self.predicates_a, &other.predicates_a),
            ("predicates_b", &self.predicates_b, &other.predicates_b),
        ]
        .into_iter()
        .find(|(_, x, y)| x != y)
        .map(|(n, _, _)| n)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: TrainConfig,
    pub hashes: InternHashes,
    pub epoch: usize,
    pub loss_history: Vec<EpochLosses>,
    pub tensors: Vec<TensorEntry>,
}

/// Everything needed to resume inference: config, parameters and store, all at `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub hashes: InternHashes,
    pub epoch: usize,
    pub loss_history: Vec<EpochLosses>,
    /// Parameters in store order.
    pub params: Vec<(String, Tensor<f32>)>,
    pub x0: Tensor<f32>,
}

impl Checkpoint {
    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|(_, t)| t.data().iter().all(|v| v.is_finite())) && self.x0.data().iter().all(|v| v.is_finite())
    }

    pub fn capture<S: Scalar>(
        config: &TrainConfig,
        pair: &GraphPair,
        params: &ParameterStore<S>,
        store: &HistoricalEmbeddingStore<S>,
        epoch: usize,
        loss_history: &[EpochLosses],
    ) -> Self {
        Self {
            config: config.clone(),
            hashes: InternHashes::of(pair),
            epoch,
            loss_history: loss_history.to_vec(),
            params: params.iter().map(|(n, p)| (n.to_string(), p.value.cast())).collect(),
            x0: store.tensor().cast(),
        }
    }

    pub fn param_store<S: Scalar>(&self) -> Result<ParameterStore<S>> {
        let mut s = ParameterStore::new();
        for (name, t) in &self.params {
            s.insert(name, t.cast())?;
        }
        Ok(s)
    }

    pub fn store<S: Scalar>(&self) -> HistoricalEmbeddingStore<S> {
        HistoricalEmbeddingStore::from_tensor(self.x0.cast())
    }

    /// Fails with [`Error::HashMismatch`] unless `pair` matches the training data.
    pub fn verify(&self, pair: &GraphPair) -> Result<()> {
        match self.hashes.first_difference(&InternHashes::of(pair)) {
            Some(table) => Err(Error::HashMismatch(table.to_string())),
            None => Ok(()),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut blob: Vec<u8> = Vec::new();
        let mut tensors = Vec::with_capacity(self.params.len() + 1);
        let all = self.params.iter().map(|(n, t)| (n.as_str(), t)).chain([(STORE_TENSOR, &self.x0)]);
        for (name, t) in all {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset: blob.len() as u64,
            });
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            hashes: self.hashes.clone(),
            epoch: self.epoch,
            loss_history: self.loss_history.clone(),
            tensors,
        };
        let blob_path = dir.join(TENSORS_FILE);
        fs::write(&blob_path, blob).map_err(io_err(&blob_path))?;
        let man_path = dir.join(MANIFEST_FILE);
        fs::write(&man_path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&man_path))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let man_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&man_path).map_err(io_err(&man_path))?;
        let raw: serde_json::Value = serde_json::from_str(&text)?;
        let found = raw.get("format_version").and_then(|v| v.as_u64());
        match found {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::VersionMismatch {
                    found: v as u32,
                    expected: FORMAT_VERSION,
                })
            }
            None => return Err(Error::Validation("manifest has no format_version".into())),
        }
        let manifest: Manifest = serde_json::from_value(raw)?;
        let blob_path = dir.join(TENSORS_FILE);
        let blob = fs::read(&blob_path).map_err(io_err(&blob_path))?;

        let mut params = Vec::new();
        let mut x0 = None;
        for e in &manifest.tensors {
            let n: usize = e.shape.iter().product();
            let needed = e.offset + 4 * n as u64;
            if needed > blob.len() as u64 {
                return Err(Error::TruncatedBlob {
                    name: e.name.clone(),
                    needed,
                    actual: blob.len() as u64,
                });
            }
            let bytes = &blob[e.offset as usize..needed as usize];
            let data: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(&e.shape, data).map_err(|err| Error::Validation(format!("{}: {err}", e.name)))?;
            if e.name == STORE_TENSOR {
                x0 = Some(t);
            } else {
                params.push((e.name.clone(), t));
            }
        }
        let x0 = x0.ok_or_else(|| Error::Validation(format!("missing `{STORE_TENSOR}`")))?;
        let ck = Self {
            config: manifest.config,
            hashes: manifest.hashes,
            epoch: manifest.epoch,
            loss_history: manifest.loss_history,
            params,
            x0,
        };
        ck.validate()?;
        Ok(ck)
    }

    /// Loads and checks the intern hashes against `pair`.
    pub fn load_for(dir: &Path, pair: &GraphPair) -> Result<Self> {
        let ck = Self::load(dir)?;
        ck.verify(pair)?;
        Ok(ck)
    }

    /// Parameter names and shapes must match what the config would create.
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        let cfg = &self.config.model;
        cfg.validate().map_err(|e| Error::Validation(e.to_string()))?;
        if self.x0.shape().len() != 2 || self.x0.cols() != cfg.dim {
            return bad(format!("store shape {:?} does not match dim {}", self.x0.shape(), cfg.dim));
        }
        let pred_rows = self
            .params
            .iter()
            .find(|(n, _)| n == "pred_emb")
            .map(|(_, t)| t.rows())
            .unwrap_or(0);
        if pred_rows == 0 {
            return bad("missing `pred_emb`".into());
        }
        let reference = init_params::<f32>(cfg, &crate::batching::JointIndex {
            entities_a: 1,
            entities_b: 1,
            predicates_a: pred_rows,
            predicates_b: 0,
        }, 0)
            .map_err(|e| Error::Validation(e.to_string()))?;
        if reference.len() != self.params.len() {
            return bad(format!("expected {} parameters, found {}", reference.len(), self.params.len()));
        }
        for (name, t) in &self.params {
            let want = reference
                .value(name)
                .map_err(|_| Error::Validation(format!("unexpected parameter `{name}`")))?;
            if want.shape() != t.shape() {
                return bad(format!("`{name}` has shape {:?}, expected {:?}", t.shape(), want.shape()));
            }
        }
        Ok(())
    }
}
