//! Model and training configs for fast tests and for the toy attribution run.

use std::path::Path;

use candle_core::{DType, Device};
use gfd_core::data::{load_manifest, DatasetManifest, PatchPolicy};
use gfd_core::losses::Ablation;
use gfd_core::model::{GfdModel, ModelConfig};
use gfd_core::networks::{BackboneSpec, DiscriminatorConfig, PerceptualConfig, PerceptualWeights};
use gfd_core::toy::{write_toy_dataset, ToyConfig};
use gfd_core::training::{CheckpointConfig, Task, TrainConfig};

/// Every network at minimum width; runs on 16px crops.
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

pub const TOY_CROP: usize = 32;

/// The small toy config: depth-4 U-Net with 16 base channels on 32px crops.
/// The learning rate is raised to 1e-3 so the run fits in 1000 iterations.
pub fn toy_config(manifest: &DatasetManifest) -> CheckpointConfig {
    let model = ModelConfig {
        generator: BackboneSpec::unet(16, 4),
        discriminator: DiscriminatorConfig { base_channels: 16 },
        classifier: BackboneSpec::resnet(8, vec![1, 1, 1, 1]),
        perceptual: PerceptualConfig {
            weights: PerceptualWeights::Seeded(0),
            width_divisor: 8,
            ..Default::default()
        },
    };
    let train = TrainConfig {
        lr: 1e-3,
        batch_size: 12,
        max_iters: 1000,
        pretrain_c_iters: 200,
        val_every: 0,
        checkpoint_every: 0,
        ..TrainConfig::for_task(Task::Attribution)
    };
    let patch = PatchPolicy {
        resize_to: None,
        crop: TOY_CROP,
        ..Default::default()
    };
    CheckpointConfig::for_manifest(manifest, model, train, patch)
}

/// Double-precision model for finite-difference checks.
pub fn gradcheck_model() -> GfdModel {
    let cfg = ModelConfig {
        perceptual: PerceptualConfig {
            weights: PerceptualWeights::Seeded(1),
            width_divisor: 16,
            ..Default::default()
        },
        ..tiny_model()
    };
    GfdModel::new(&cfg, 3, true, DType::F64, &Device::Cpu, 7).unwrap()
}

/// A small toy dataset: 60 shared contents, two generator classes.
pub fn small_toy(root: &Path) -> DatasetManifest {
    let toy = write_toy_dataset(
        root,
        &ToyConfig {
            pool_size: 60,
            ..ToyConfig::default()
        },
    )
    .unwrap();
    load_manifest(&toy.manifest).unwrap()
}

pub fn with_ablation(mut cfg: CheckpointConfig, ablation: Ablation) -> CheckpointConfig {
    cfg.train.weights = cfg.train.weights.with_ablation(ablation);
    cfg
}
