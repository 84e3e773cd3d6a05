use candle_core::{DType, Device, Module, Tensor};
use candle_nn::Conv2d;
use serde::{Deserialize, Serialize};

use super::layers::{conv2d, leaky_relu, InstanceNorm};
use super::params::ParamStore;
use crate::error::{GfdError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    /// Width of the first layer; later layers double it.
    pub base_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { base_channels: 64 }
    }
}

/// Smallest side that leaves a 4x4 output window after three halvings.
pub const MIN_INPUT: usize = 16;

/// PatchGAN discriminator: three stride-2 4x4 convs (64 -> 128 -> 256 by
/// default) and a 1-channel 4x4 output conv producing a grid of logits.
pub struct PatchGan {
    store: ParamStore,
    conv1: Conv2d,
    conv2: Conv2d,
    norm2: InstanceNorm,
    conv3: Conv2d,
    norm3: InstanceNorm,
    out: Conv2d,
}

impl PatchGan {
    pub fn new(
        cfg: &DiscriminatorConfig,
        dtype: DType,
        device: &Device,
        seed: u64,
    ) -> Result<Self> {
        let store = ParamStore::new(dtype, device);
        let vb = store.vb();
        let b = cfg.base_channels;
        let net = Self {
            conv1: conv2d(3, b, 4, 2, 1, true, vb.pp("conv1"))?,
            conv2: conv2d(b, 2 * b, 4, 2, 1, true, vb.pp("conv2"))?,
            norm2: InstanceNorm::new(2 * b, vb.pp("norm2"))?,
            conv3: conv2d(2 * b, 4 * b, 4, 2, 1, true, vb.pp("conv3"))?,
            norm3: InstanceNorm::new(4 * b, vb.pp("norm3"))?,
            out: conv2d(4 * b, 1, 4, 1, 1, true, vb.pp("out"))?,
            store,
        };
        net.store.init_seeded(seed)?;
        Ok(net)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Pre-sigmoid patch scores `[B, 1, h, w]`. Inputs must be at least
    /// `MIN_INPUT` pixels on each side.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        if h.min(w) < MIN_INPUT {
            return Err(GfdError::ImageTooSmall {
                size: h.min(w),
                crop: MIN_INPUT,
            });
        }
        let h = leaky_relu(&self.conv1.forward(x)?, 0.2)?;
        let h = leaky_relu(&self.norm2.forward(&self.conv2.forward(&h)?)?, 0.2)?;
        let h = leaky_relu(&self.norm3.forward(&self.conv3.forward(&h)?)?, 0.2)?;
        Ok(self.out.forward(&h)?)
    }
}
