use candle_core::{DType, Device, Module, Tensor};
use candle_nn::{Conv2d, Linear, VarBuilder};
use serde::{Deserialize, Serialize};

use super::backbone::{Backbone, BackboneSpec, EncoderLayout};
use super::layers::{conv2d, global_avg_pool, linear, upsample2x, InstanceNorm};
use super::params::ParamStore;
use crate::error::{GfdError, Result};

/// Generator hyper-parameters: encoder recipe plus the class count of its head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub encoder: BackboneSpec,
    pub num_classes: usize,
}

struct UpStep {
    conv: Conv2d,
    norm: InstanceNorm,
    skip: Option<usize>,
}

/// Expanding path: nearest x2 upsample, 3x3 conv, instance norm, ReLU, then
/// concatenation with the encoder skip at the same scale. The output layer is
/// a linear 3x3 conv, so fingerprints are unbounded signed residuals.
struct Decoder {
    steps: Vec<UpStep>,
    out: Conv2d,
}

impl Decoder {
    fn new(layout: &EncoderLayout, vb: VarBuilder) -> Result<Self> {
        let mut steps = Vec::with_capacity(layout.depth);
        let mut ch = layout.latent_channels;
        for (n, scale) in (0..layout.depth).rev().enumerate() {
            let skip = layout.skips.iter().position(|&(_, s)| s == scale);
            let out_ch = match skip {
                Some(i) => layout.skips[i].0,
                None => (ch / 2).max(8),
            };
            let vbs = vb.pp(format!("up{}", n + 1));
            steps.push(UpStep {
                conv: conv2d(ch, out_ch, 3, 1, 1, true, vbs.pp("conv"))?,
                norm: InstanceNorm::new(out_ch, vbs.pp("norm"))?,
                skip,
            });
            ch = out_ch + skip.map_or(0, |i| layout.skips[i].0);
        }
        let out = conv2d(ch, 3, 3, 1, 1, true, vb.pp("out"))?;
        Ok(Self { steps, out })
    }

    fn forward(&self, latent: &Tensor, skips: &[(Tensor, usize)]) -> Result<Tensor> {
        let mut h = latent.clone();
        for step in &self.steps {
            h = step
                .norm
                .forward(&step.conv.forward(&upsample2x(&h)?)?)?
                .relu()?;
            if let Some(i) = step.skip {
                h = Tensor::cat(&[&h, &skips[i].0], 1)?;
            }
        }
        Ok(self.out.forward(&h)?)
    }
}

/// Fingerprint generator G: encoder G_enc and decoder G_dec with skip connections.
pub struct Generator {
    store: ParamStore,
    spec: BackboneSpec,
    encoder: Backbone,
    decoder: Decoder,
}

impl Generator {
    pub fn new(spec: &BackboneSpec, dtype: DType, device: &Device, seed: u64) -> Result<Self> {
        let store = ParamStore::new(dtype, device);
        let vb = store.vb();
        let encoder = Backbone::new(spec, vb.pp("enc"))?;
        let decoder = Decoder::new(&encoder.layout(), vb.pp("dec"))?;
        store.init_seeded(seed)?;
        Ok(Self {
            store,
            spec: spec.clone(),
            encoder,
            decoder,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn latent_channels(&self) -> usize {
        self.encoder.layout().latent_channels
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 {
            return Err(GfdError::ShapeMismatch {
                expected: vec![3],
                got: vec![c],
            });
        }
        let factor = 1usize << self.spec.depth;
        for size in [h, w] {
            if size % factor != 0 {
                return Err(GfdError::NotDivisible {
                    size,
                    depth: self.spec.depth,
                });
            }
        }
        Ok(())
    }

    /// Encoder only: the latent code `z`.
    pub fn encode(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.check_input(x)?;
        Ok(self.encoder.forward_t(x, train)?.latent)
    }

    /// Returns `(fingerprint, latent)` for a `[B, 3, H, W]` batch.
    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<(Tensor, Tensor)> {
        self.check_input(x)?;
        let enc = self.encoder.forward_t(x, train)?;
        let fp = self.decoder.forward(&enc.latent, &enc.skips)?;
        Ok((fp, enc.latent))
    }
}

/// Classification head H: global average pooling then a fully connected layer.
pub struct Head {
    store: ParamStore,
    fc: Linear,
    in_channels: usize,
}

impl Head {
    pub fn new(
        name: &str,
        in_channels: usize,
        num_classes: usize,
        dtype: DType,
        device: &Device,
        seed: u64,
    ) -> Result<Self> {
        let store = ParamStore::new(dtype, device);
        let fc = linear(in_channels, num_classes, store.vb().pp(name))?;
        store.init_seeded(seed)?;
        Ok(Self {
            store,
            fc,
            in_channels,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let c = z.dims4()?.1;
        if c != self.in_channels {
            return Err(GfdError::ShapeMismatch {
                expected: vec![self.in_channels],
                got: vec![c],
            });
        }
        Ok(self.fc.forward(&global_avg_pool(z)?)?)
    }
}
