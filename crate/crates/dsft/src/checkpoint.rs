//! `DSFT-CKPT v1`: a JSON manifest plus a blob of little-endian f32 values.
//!
//! The blob holds every parameter tensor in layout order, followed by the Adam first
//! and second moments when optimizer state is present. Offsets in the manifest are
//! byte offsets into the blob.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use dsft_core::model::Layout;
use dsft_core::trainer::{AdamState, DivergenceMonitor, Trainer};
use dsft_core::{DenoiserParams, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{sha256_hex, write_file, write_json};

pub const FORMAT: &str = "DSFT-CKPT v1";
pub const MANIFEST_FILE: &str = "checkpoint.json";
pub const BLOB_FILE: &str = "tensors.bin";
const F32_BYTES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorEntry {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Enough to regenerate every random draw after `next_step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub generator: String,
    pub seed: u64,
    pub next_step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: String,
    pub t: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorState {
    pub initial_loss: Option<f64>,
    pub streak: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub step: u64,
    pub model: ModelConfig,
    pub config: BTreeMap<String, String>,
    pub vocab_hash: String,
    pub rng: RngState,
    pub monitor: MonitorState,
    pub tensors: Vec<TensorEntry>,
    pub optimizer: Option<OptimizerState>,
    pub blob: String,
    pub blob_bytes: usize,
    pub blob_sha256: String,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub step: u64,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub vocab_hash: String,
    pub monitor: DivergenceMonitor,
    pub params: DenoiserParams<f32>,
    pub adam: Option<AdamState<f32>>,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer<f32>, config: BTreeMap<String, String>, vocab_hash: &str) -> Self {
        Checkpoint {
            step: trainer.step_index(),
            seed: trainer.config().seed.0,
            config,
            vocab_hash: vocab_hash.to_string(),
            monitor: trainer.monitor(),
            params: trainer.params().clone(),
            adam: Some(trainer.adam().clone()),
        }
    }

    fn blob_and_manifest(&self) -> (Vec<u8>, CheckpointManifest) {
        let mut blob = Vec::with_capacity(self.params.as_slice().len() * F32_BYTES * 3);
        let push = |blob: &mut Vec<u8>, xs: &[f32]| {
            for x in xs {
                blob.extend_from_slice(&x.to_le_bytes());
            }
        };
        let tensors: Vec<TensorEntry> = self
            .params
            .layout()
            .specs()
            .iter()
            .map(|s| TensorEntry { name: s.name.clone(), shape: s.shape.clone(), offset: s.offset * F32_BYTES })
            .collect();
        push(&mut blob, self.params.as_slice());
        let optimizer = self.adam.as_ref().map(|adam| {
            let n = adam.m.len();
            let mut entries = Vec::new();
            for (name, xs) in [("adam.m", &adam.m), ("adam.v", &adam.v)] {
                entries.push(TensorEntry { name: name.into(), shape: vec![n], offset: blob.len() });
                push(&mut blob, xs);
            }
            OptimizerState { kind: "adam".into(), t: adam.t, tensors: entries }
        });
        let manifest = CheckpointManifest {
            format: FORMAT.into(),
            step: self.step,
            model: *self.params.config(),
            config: self.config.clone(),
            vocab_hash: self.vocab_hash.clone(),
            rng: RngState { generator: "chacha8".into(), seed: self.seed, next_step: self.step },
            monitor: MonitorState { initial_loss: self.monitor.initial, streak: self.monitor.streak },
            tensors,
            optimizer,
            blob: BLOB_FILE.into(),
            blob_bytes: blob.len(),
            blob_sha256: sha256_hex(&blob),
        };
        (blob, manifest)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let (blob, manifest) = self.blob_and_manifest();
        write_file(&dir.join(BLOB_FILE), &blob)?;
        write_json(&dir.join(MANIFEST_FILE), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: CheckpointManifest = crate::io::read_json(&dir.join(MANIFEST_FILE))?;
        if manifest.format != FORMAT {
            return Err(Error::Usage(format!("{}: unsupported checkpoint format {:?}", dir.display(), manifest.format)));
        }
        let blob_path = dir.join(&manifest.blob);
        let blob = fs::read(&blob_path).map_err(Error::io(&blob_path))?;
        if blob.len() != manifest.blob_bytes || sha256_hex(&blob) != manifest.blob_sha256 {
            return Err(Error::Integrity(format!("{}: blob does not match its manifest", blob_path.display())));
        }
        let layout = Arc::new(Layout::new(manifest.model)?);
        let expected: Vec<TensorEntry> = layout
            .specs()
            .iter()
            .map(|s| TensorEntry { name: s.name.clone(), shape: s.shape.clone(), offset: s.offset * F32_BYTES })
            .collect();
        if expected != manifest.tensors {
            return Err(Error::Integrity(format!("{}: tensor table does not match the model config", dir.display())));
        }
        let read = |e: &TensorEntry| -> Result<Vec<f32>> {
            let bytes = blob
                .get(e.offset..e.offset + e.len() * F32_BYTES)
                .ok_or_else(|| Error::Integrity(format!("tensor {} lies outside the blob", e.name)))?;
            Ok(bytes.chunks_exact(F32_BYTES).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
        };
        let mut data = Vec::with_capacity(layout.total());
        for e in &manifest.tensors {
            data.extend(read(e)?);
        }
        let params = DenoiserParams::from_data(layout.clone(), data)?;
        let adam = match &manifest.optimizer {
            None => None,
            Some(o) => {
                let find = |name: &str| {
                    o.tensors
                        .iter()
                        .find(|e| e.name == name && e.shape == [layout.total()])
                        .ok_or_else(|| Error::Integrity(format!("optimizer tensor {name} missing or misshapen")))
                };
                Some(AdamState { m: read(find("adam.m")?)?, v: read(find("adam.v")?)?, t: o.t })
            }
        };
        Ok(Checkpoint {
            step: manifest.step,
            seed: manifest.rng.seed,
            config: manifest.config,
            vocab_hash: manifest.vocab_hash,
            monitor: DivergenceMonitor { initial: manifest.monitor.initial_loss, streak: manifest.monitor.streak },
            params,
            adam,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dsft_core::Seed;

    fn tiny() -> ModelConfig {
        ModelConfig { layers: 1, heads: 2, dim: 4, ff_dim: 6, max_len: 8, vocab_size: 10 }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let params = DenoiserParams::<f32>::init(tiny(), Seed(3)).unwrap();
        let n = params.as_slice().len();
        let adam = AdamState { m: (0..n).map(|i| i as f32 * 0.5).collect(), v: vec![0.25; n], t: 7 };
        let ck = Checkpoint {
            step: 7,
            seed: 3,
            config: BTreeMap::from([("seed".to_string(), "3".to_string())]),
            vocab_hash: "abc".into(),
            monitor: DivergenceMonitor { initial: Some(0.1 + 0.2), streak: 2 },
            params,
            adam: Some(adam),
        };
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.params, ck.params);
        assert_eq!(back.adam, ck.adam);
        assert_eq!(back.monitor, ck.monitor);
        assert_eq!((back.step, back.seed, &back.config, &back.vocab_hash), (7, 3, &ck.config, &ck.vocab_hash));

        let blob = fs::read(dir.path().join(BLOB_FILE)).unwrap();
        assert_eq!(blob.len(), 3 * n * 4);
        let first = f32::from_le_bytes(blob[0..4].try_into().unwrap());
        assert_eq!(first, ck.params.as_slice()[0]);
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let params = DenoiserParams::<f32>::init(tiny(), Seed(1)).unwrap();
        let ck = Checkpoint {
            step: 0,
            seed: 1,
            config: BTreeMap::new(),
            vocab_hash: String::new(),
            monitor: DivergenceMonitor::default(),
            params,
            adam: None,
        };
        ck.save(dir.path()).unwrap();
        let path = dir.path().join(BLOB_FILE);
        let mut blob = fs::read(&path).unwrap();
        blob[5] ^= 1;
        fs::write(&path, blob).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Integrity(_))));
    }
}
