//! The assembled G/H/D/C/F networks and the loss terms that tie them together.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{GfdError, Result};
use crate::losses::{adversarial_d, adversarial_g, cross_entropy};
use crate::networks::{
    BackboneSpec, Classifier, DiscriminatorConfig, Generator, Head, PatchGan, Perceptual,
    PerceptualConfig,
};

/// Architecture of every network in the framework.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub generator: BackboneSpec,
    pub discriminator: DiscriminatorConfig,
    pub classifier: BackboneSpec,
    pub perceptual: PerceptualConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            generator: BackboneSpec::unet(64, 5),
            discriminator: DiscriminatorConfig::default(),
            classifier: BackboneSpec::resnet50(),
            perceptual: PerceptualConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.classifier.validate()?;
        self.perceptual.validate()?;
        if self.discriminator.base_channels == 0 {
            return Err(GfdError::Config(
                "discriminator base_channels must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-network seeds derived from the run seed.
pub fn network_seed(seed: u64, tag: &str) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for b in tag.bytes() {
        h = h.rotate_left(7) ^ b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

pub struct GfdModel {
    pub num_classes: usize,
    pub generator: Generator,
    pub head: Head,
    pub discriminator: PatchGan,
    pub classifier: Classifier,
    /// Loaded only when the perceptual term is in use.
    pub perceptual: Option<Perceptual>,
}

impl GfdModel {
    pub fn new(
        cfg: &ModelConfig,
        num_classes: usize,
        with_perceptual: bool,
        dtype: DType,
        device: &Device,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let generator = Generator::new(&cfg.generator, dtype, device, network_seed(seed, "G"))?;
        let head = Head::new(
            cfg.generator.head_name(),
            generator.latent_channels(),
            num_classes,
            dtype,
            device,
            network_seed(seed, "H"),
        )?;
        let discriminator =
            PatchGan::new(&cfg.discriminator, dtype, device, network_seed(seed, "D"))?;
        let classifier = Classifier::new(
            &cfg.classifier,
            num_classes,
            dtype,
            device,
            network_seed(seed, "C"),
        )?;
        let perceptual = if with_perceptual {
            Some(Perceptual::new(&cfg.perceptual, dtype, device)?)
        } else {
            None
        };
        Ok(Self {
            num_classes,
            generator,
            head,
            discriminator,
            classifier,
            perceptual,
        })
    }

    /// `CE(H(z), y)`.
    pub fn loss_latent_cls(&self, z: &Tensor, labels: &[usize]) -> Result<Tensor> {
        cross_entropy(&self.head.forward(z)?, labels)
    }

    /// `CE(C(x_fp), y)` with C in inference mode.
    pub fn loss_aux_cls_g(&self, x_fp: &Tensor, labels: &[usize]) -> Result<Tensor> {
        cross_entropy(&self.classifier.forward_t(x_fp, false)?, labels)
    }

    /// `CE(C(x), y)` with C in training mode.
    pub fn loss_aux_cls_c(&self, x: &Tensor, labels: &[usize]) -> Result<Tensor> {
        cross_entropy(&self.classifier.forward_t(x, true)?, labels)
    }

    pub fn loss_adv_d(&self, x_pos: &Tensor, x_fp: &Tensor) -> Result<Tensor> {
        adversarial_d(
            &self.discriminator.forward(x_pos)?,
            &self.discriminator.forward(x_fp)?,
        )
    }

    pub fn loss_adv_g(&self, x_fp: &Tensor) -> Result<Tensor> {
        adversarial_g(&self.discriminator.forward(x_fp)?)
    }

    pub fn loss_perceptual(&self, x_fp: &Tensor, x_real: &Tensor) -> Result<Tensor> {
        let f = self
            .perceptual
            .as_ref()
            .ok_or_else(|| GfdError::Config("perceptual extractor not loaded".into()))?;
        f.distance(x_fp, x_real)
    }
}

/// `clamp(carrier + fingerprint, -1, 1)` on batches.
pub fn composite_batch(fingerprints: &Tensor, carriers: &Tensor) -> Result<Tensor> {
    Ok((carriers + fingerprints)?.clamp(-1.0, 1.0)?)
}
