//! Run configuration: one document covering training, architecture, patch
//! policy, GLCM settings and paths. Precedence is defaults < file < overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::GlcmConfig;
use crate::data::{DatasetManifest, Interpolation, PatchPolicy};
use crate::error::{GfdError, Result};
use crate::losses::{Ablation, LossWeights};
use crate::model::ModelConfig;
use crate::training::{CheckpointConfig, Task, TrainConfig};

/// Patch settings; the resize target falls back to the manifest, then to the
/// default for the native resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchSettings {
    pub resize_to: Option<usize>,
    pub crop: usize,
    pub interpolation: Interpolation,
}

impl Default for PatchSettings {
    fn default() -> Self {
        Self {
            resize_to: None,
            crop: 224,
            interpolation: Interpolation::Bilinear,
        }
    }
}

impl PatchSettings {
    pub fn policy_for(&self, manifest: &DatasetManifest) -> PatchPolicy {
        let mut p = PatchPolicy::for_native(manifest.native_resolution, self.crop);
        if let Some(r) = self.resize_to.or(manifest.resize_to) {
            p.resize_to = Some(r);
        }
        p.interpolation = self.interpolation;
        p
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub patch: PatchSettings,
    pub glcm: GlcmConfig,
    pub paths: Paths,
    /// Shorthand that sets the loss toggles.
    pub ablation: Option<Ablation>,
}

impl RunConfig {
    /// Parses a possibly partial config document over the defaults, so a
    /// nested section may set single fields. Unknown keys are rejected.
    /// Detection runs without explicit weights get the detection defaults.
    pub fn from_value(v: Value) -> Result<Self> {
        let explicit_weights = v.pointer("/train/weights").is_some();
        let mut full = serde_json::to_value(RunConfig::default())?;
        merge(&mut full, v);
        let mut cfg: RunConfig =
            serde_json::from_value(full).map_err(|e| GfdError::Config(e.to_string()))?;
        if !explicit_weights && cfg.train.task == Task::Detection {
            cfg.train.weights = LossWeights {
                enabled: cfg.train.weights.enabled,
                ..LossWeights::detection()
            };
        }
        if let Some(a) = cfg.ablation {
            cfg.train.weights = cfg.train.weights.with_ablation(a);
        }
        Ok(cfg)
    }

    /// Layers `overrides` over the file (or an empty document) and parses
    /// the result, so flags win over the file and the file over defaults.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut v = match file {
            Some(path) => {
                if !path.is_file() {
                    return Err(GfdError::MissingFile(path.to_path_buf()));
                }
                serde_json::from_str(&std::fs::read_to_string(path)?)
                    .map_err(|e| GfdError::Config(format!("{}: {e}", path.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for (key, value) in overrides {
            set_path(&mut v, key, value.clone())?;
        }
        Self::from_value(v)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::resolve(Some(path), &[])
    }

    /// Applies `dotted.key=value` overrides on top of this config.
    pub fn with_overrides<S: AsRef<str>>(self, overrides: &[S]) -> Result<Self> {
        let mut v = serde_json::to_value(&self)?;
        for o in overrides {
            let (key, value) = parse_override(o.as_ref())?;
            set_path(&mut v, &key, value)?;
        }
        Self::from_value(v)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.validate()?;
        self.glcm.validate()?;
        if self.patch.crop == 0 {
            return Err(GfdError::Config("crop must be positive".into()));
        }
        Ok(())
    }

    pub fn checkpoint_config(&self, manifest: &DatasetManifest) -> CheckpointConfig {
        CheckpointConfig::for_manifest(
            manifest,
            self.model.clone(),
            self.train.clone(),
            self.patch.policy_for(manifest),
        )
    }
}

/// Splits `dotted.key=value`; the value parses as JSON, falling back to a
/// plain string.
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| GfdError::Config(format!("override '{s}' is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| {
            GfdError::Config(format!(
                "override '{key}': '{part}' is not inside an object"
            ))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
    }
    Err(GfdError::Config("empty override key".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_value(json!({"train": {"lr": 1e-4, "bogus": 1}})).unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn precedence_defaults_file_overrides() {
        let cfg = RunConfig::from_value(json!({"train": {"lr": 2e-4, "seed": 3}})).unwrap();
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.train.lr, 2e-4);
        let cfg = cfg
            .with_overrides(&["train.seed=9", "model.generator.depth=4"])
            .unwrap();
        assert_eq!(
            (cfg.train.seed, cfg.train.lr, cfg.model.generator.depth),
            (9, 2e-4, 4)
        );
    }

    #[test]
    fn partial_nested_sections_fill_from_defaults() {
        let cfg =
            RunConfig::from_value(json!({"model": {"generator": {"base_channels": 8}}})).unwrap();
        assert_eq!(cfg.model.generator.base_channels, 8);
        assert_eq!(
            cfg.model.generator.depth,
            ModelConfig::default().generator.depth
        );
    }

    #[test]
    fn detection_gets_detection_weights() {
        let cfg = RunConfig::from_value(json!({"train": {"task": "detection"}})).unwrap();
        assert_eq!(cfg.train.weights.adversarial, 1e-2);
        let cfg = RunConfig::from_value(json!({"ablation": "G+C"})).unwrap();
        assert!(!cfg.train.weights.enabled.adversarial && cfg.train.weights.enabled.aux_cls);
    }

    #[test]
    fn task_flag_switches_default_weights() {
        let cfg = RunConfig::resolve(None, &[("train.task".into(), json!("detection"))]).unwrap();
        assert_eq!(cfg.train.weights.adversarial, 1e-2);
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = RunConfig::default()
            .with_overrides(&["train.max_iters=5"])
            .unwrap();
        let again = RunConfig::from_value(serde_json::to_value(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
    }
}
