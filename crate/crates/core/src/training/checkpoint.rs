//! On-disk checkpoint layout:
//!
//! ```text
//! <dir>/G.safetensors H.safetensors D.safetensors C.safetensors
//! <dir>/config.json       architecture, training config, patch policy, labels
//! <dir>/optimizer.safetensors
//! <dir>/state.json        iteration, optimizer steps, RNG state, best val
//! <dir>/manifest.json     per-parameter shapes and sha256 hashes
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::data::{LabelSet, PatchPolicy};
use crate::error::{GfdError, Result};
use crate::model::ModelConfig;
use crate::networks::{ParamRecord, ParamStore};

pub const CONFIG_FILE: &str = "config.json";
pub const STATE_FILE: &str = "state.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const OPTIMIZER_FILE: &str = "optimizer.safetensors";
pub const FORMAT_VERSION: u32 = 1;

pub fn weights_file(network: &str) -> String {
    format!("{network}.safetensors")
}

/// Everything needed to rebuild the networks and the data pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub patch: PatchPolicy,
    /// Training taxonomy (binary for detection).
    pub labels: LabelSet,
}

/// ChaCha state as seed, stream and word position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal, since the position is a 128-bit counter.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = |what: &str| GfdError::Checkpoint(format!("invalid rng {what}"));
        let seed: [u8; 32] = hex::decode(&self.seed)
            .map_err(|_| bad("seed"))?
            .try_into()
            .map_err(|_| bad("seed"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad("word position"))?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed joint iterations.
    pub iteration: usize,
    pub pretrain_done: bool,
    pub optimizer_steps: BTreeMap<String, u64>,
    pub rng: RngState,
    pub best_val: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub num_params: usize,
    pub params: BTreeMap<String, ParamRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub networks: BTreeMap<String, NetworkRecord>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(GfdError::MissingFile(path.to_path_buf()));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn read_config(dir: &Path) -> Result<CheckpointConfig> {
    if !dir.is_dir() {
        return Err(GfdError::Checkpoint(format!(
            "no checkpoint directory at {}",
            dir.display()
        )));
    }
    read_json(&dir.join(CONFIG_FILE))
}

/// Saves weights and the integrity manifest for the given networks.
pub fn save_networks(dir: &Path, networks: &[(&str, &ParamStore)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut records = BTreeMap::new();
    for (name, store) in networks {
        store.save(&dir.join(weights_file(name)))?;
        records.insert(
            name.to_string(),
            NetworkRecord {
                num_params: store.num_params(),
                params: store.records()?,
            },
        );
    }
    write_json(
        &dir.join(MANIFEST_FILE),
        &CheckpointManifest {
            format_version: FORMAT_VERSION,
            networks: records,
        },
    )
}

/// Loads one network and checks it against the manifest's shapes and hashes.
pub fn load_network(dir: &Path, name: &str, store: &ParamStore) -> Result<()> {
    let manifest: CheckpointManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let expected = manifest
        .networks
        .get(name)
        .ok_or_else(|| GfdError::Checkpoint(format!("manifest has no entry for network {name}")))?;
    store.load(&dir.join(weights_file(name)))?;
    let got = store.records()?;
    if got.len() != expected.params.len() {
        return Err(GfdError::Checkpoint(format!(
            "network {name}: {} parameters in checkpoint, {} in model",
            expected.params.len(),
            got.len()
        )));
    }
    for (param, rec) in &got {
        match expected.params.get(param) {
            Some(e) if e == rec => {}
            Some(e) if e.shape != rec.shape => {
                return Err(GfdError::ShapeMismatch {
                    expected: e.shape.clone(),
                    got: rec.shape.clone(),
                })
            }
            Some(_) => {
                return Err(GfdError::Checkpoint(format!(
                    "network {name}: hash mismatch for '{param}'"
                )))
            }
            None => {
                return Err(GfdError::Checkpoint(format!(
                    "network {name}: unexpected parameter '{param}'"
                )))
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use rand::{RngCore, SeedableRng};

    #[test]
    fn rng_state_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        rng.next_u64();
        rng.next_u32();
        let state = RngState::capture(&rng);
        let mut restored = state.restore().unwrap();
        assert_eq!(rng.next_u64(), restored.next_u64());
    }

    #[test]
    fn tampered_weights_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let store = ParamStore::new(DType::F32, &Device::Cpu);
        candle_nn::linear(3, 2, store.vb().pp("fc")).unwrap();
        store.init_seeded(1).unwrap();
        save_networks(dir.path(), &[("H", &store)]).unwrap();
        load_network(dir.path(), "H", &store).unwrap();

        let mut manifest: CheckpointManifest = read_json(&dir.path().join(MANIFEST_FILE)).unwrap();
        manifest
            .networks
            .get_mut("H")
            .unwrap()
            .params
            .get_mut("fc.bias")
            .unwrap()
            .sha256 = "00".into();
        write_json(&dir.path().join(MANIFEST_FILE), &manifest).unwrap();
        let err = load_network(dir.path(), "H", &store).unwrap_err();
        assert_eq!(err.kind(), "checkpoint");
    }
}
