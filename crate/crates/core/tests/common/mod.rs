#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use gfd_core::data::{load_manifest, DatasetManifest, PatchPolicy};
use gfd_core::losses::Ablation;
use gfd_core::model::ModelConfig;
use gfd_core::networks::{BackboneSpec, DiscriminatorConfig, PerceptualConfig, PerceptualWeights};
use gfd_core::toy::{write_toy_dataset, ToyConfig, ToyDataset};
use gfd_core::training::{CheckpointConfig, Task, TrainConfig};

/// A small toy dataset: 60 shared contents, two generator classes.
pub fn small_toy(root: &Path) -> (ToyDataset, DatasetManifest) {
    let toy = write_toy_dataset(
        root,
        &ToyConfig {
            pool_size: 60,
            ..ToyConfig::default()
        },
    )
    .unwrap();
    let manifest = load_manifest(&toy.manifest).unwrap();
    (toy, manifest)
}

pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        generator: BackboneSpec::unet(4, 3),
        discriminator: DiscriminatorConfig { base_channels: 4 },
        classifier: BackboneSpec::resnet(4, vec![1, 1, 1, 1]),
        perceptual: PerceptualConfig {
            weights: PerceptualWeights::Seeded(0),
            width_divisor: 16,
            ..Default::default()
        },
    }
}

/// Full-objective config on 16px crops, a few iterations long.
pub fn tiny_config(manifest: &DatasetManifest, max_iters: usize) -> CheckpointConfig {
    let train = TrainConfig {
        batch_size: 3,
        max_iters,
        pretrain_c_iters: 2,
        val_every: 0,
        checkpoint_every: 0,
        ..TrainConfig::for_task(Task::Attribution)
    };
    let patch = PatchPolicy {
        resize_to: None,
        crop: 16,
        ..Default::default()
    };
    CheckpointConfig::for_manifest(manifest, tiny_model(), train, patch)
}

pub fn with_ablation(mut cfg: CheckpointConfig, ablation: Ablation) -> CheckpointConfig {
    cfg.train.weights = cfg.train.weights.with_ablation(ablation);
    cfg
}

pub fn with_task(
    manifest: &DatasetManifest,
    mut cfg: CheckpointConfig,
    task: Task,
) -> CheckpointConfig {
    let weights = TrainConfig::for_task(task).weights;
    cfg.train.task = task;
    cfg.train.weights = weights;
    CheckpointConfig::for_manifest(manifest, cfg.model, cfg.train, cfg.patch)
}

pub type Snapshot = BTreeMap<String, Vec<u8>>;
