use candle_core::{DType, Device, Module, Tensor};
use candle_nn::Linear;

use super::backbone::{Backbone, BackboneSpec};
use super::layers::{global_avg_pool, linear};
use super::params::ParamStore;
use crate::error::Result;

/// A plain backbone classifier (auxiliary classifier C, or the reference
/// topology for detection mode). Parameter names follow torchvision.
pub struct Classifier {
    store: ParamStore,
    backbone: Backbone,
    fc: Linear,
}

impl Classifier {
    pub fn new(
        spec: &BackboneSpec,
        num_classes: usize,
        dtype: DType,
        device: &Device,
        seed: u64,
    ) -> Result<Self> {
        let store = ParamStore::new(dtype, device);
        let vb = store.vb();
        let backbone = Backbone::new(spec, vb.clone())?;
        let fc = linear(
            backbone.layout().latent_channels,
            num_classes,
            vb.pp(spec.head_name()),
        )?;
        store.init_seeded(seed)?;
        Ok(Self {
            store,
            backbone,
            fc,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let z = self.backbone.forward_t(x, train)?.latent;
        Ok(self.fc.forward(&global_avg_pool(&z)?)?)
    }
}
