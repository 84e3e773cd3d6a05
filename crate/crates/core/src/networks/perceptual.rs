use std::collections::HashMap;
use std::path::PathBuf;

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::{Conv2d, Conv2dConfig, VarBuilder};
use serde::{Deserialize, Serialize};

use super::layers::{conv2d, max_pool_2x2};
use super::params::ParamStore;
use crate::error::{GfdError, Result};

/// Environment variable naming the directory that holds the extractor weights.
pub const CACHE_ENV: &str = "GFD_CACHE";
/// File name looked up under `$GFD_CACHE` when weights come from the cache.
pub const CACHE_FILE: &str = "vgg16_features.safetensors";

/// VGG-16 convolution widths per stage.
const STAGES: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerceptualWeights {
    /// `$GFD_CACHE/vgg16_features.safetensors`.
    Cache,
    /// A safetensors file with torchvision `features.{i}.weight/bias` names.
    File(PathBuf),
    /// Deterministic random weights, for environments without pretrained files.
    Seeded(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptualConfig {
    pub weights: PerceptualWeights,
    /// Number of tapped stages, each tapped at its last ReLU before pooling.
    pub taps: usize,
    /// Divides every stage width (1 = the full VGG-16 recipe).
    pub width_divisor: usize,
    /// Scale each tapped map to unit L2 norm per sample before comparing.
    pub normalize: bool,
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        Self {
            weights: PerceptualWeights::Cache,
            taps: 4,
            width_divisor: 1,
            normalize: true,
        }
    }
}

impl PerceptualConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taps == 0 || self.taps > STAGES.len() {
            return Err(GfdError::Config(format!(
                "perceptual taps must be in 1..=5, got {}",
                self.taps
            )));
        }
        if self.width_divisor == 0 || 64 % self.width_divisor != 0 {
            return Err(GfdError::Config("width_divisor must divide 64".into()));
        }
        Ok(())
    }

    fn resolve_path(&self) -> Option<PathBuf> {
        match &self.weights {
            PerceptualWeights::File(p) => Some(p.clone()),
            PerceptualWeights::Cache => {
                let dir = std::env::var_os(CACHE_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from(".gfd-cache"));
                Some(dir.join(CACHE_FILE))
            }
            PerceptualWeights::Seeded(_) => None,
        }
    }
}

/// Frozen VGG-16 feature extractor F. Weights are plain tensors, never
/// variables, so gradients reach the input but not the extractor.
pub struct Perceptual {
    stages: Vec<Vec<Conv2d>>,
    mean: Tensor,
    std: Tensor,
    normalize: bool,
}

fn layer_plan(divisor: usize, taps: usize) -> Vec<Vec<(usize, usize, usize)>> {
    // (torchvision index, cin, cout) per conv, grouped by stage.
    let mut idx = 0;
    let mut cin = 3;
    let mut plan = Vec::new();
    for &(width, n) in STAGES.iter().take(taps) {
        let cout = width / divisor;
        let mut stage = Vec::new();
        for _ in 0..n {
            stage.push((idx, cin, cout));
            cin = cout;
            idx += 2;
        }
        idx += 1;
        plan.push(stage);
    }
    plan
}

impl Perceptual {
    pub fn new(cfg: &PerceptualConfig, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let plan = layer_plan(cfg.width_divisor, cfg.taps);
        let tensors: HashMap<String, Tensor> = match (&cfg.weights, cfg.resolve_path()) {
            (PerceptualWeights::Seeded(seed), _) => {
                let store = ParamStore::new(dtype, device);
                let vb = store.vb().pp("features");
                for &(i, cin, cout) in plan.iter().flatten() {
                    conv2d(cin, cout, 3, 1, 1, true, vb.pp(i.to_string()))?;
                }
                store.init_seeded(*seed)?;
                store
                    .named_vars()
                    .into_iter()
                    .map(|(k, v)| Ok((k, v.as_tensor().copy()?)))
                    .collect::<Result<_>>()?
            }
            (_, Some(path)) => {
                if !path.is_file() {
                    return Err(GfdError::MissingFile(path));
                }
                candle_core::safetensors::load(&path, device)?
            }
            _ => unreachable!("non-seeded weights always resolve to a path"),
        };
        let vb = VarBuilder::from_tensors(tensors, dtype, device).pp("features");
        let conv_cfg = Conv2dConfig {
            padding: 1,
            ..Default::default()
        };
        let mut stages = Vec::with_capacity(plan.len());
        for stage in &plan {
            let mut convs = Vec::with_capacity(stage.len());
            for &(i, cin, cout) in stage {
                let w = vb.get((cout, cin, 3, 3), &format!("{i}.weight"))?.detach();
                let b = vb.get(cout, &format!("{i}.bias"))?.detach();
                convs.push(Conv2d::new(w, Some(b), conv_cfg));
            }
            stages.push(convs);
        }
        let mean = Tensor::new(&[0.485f32, 0.456, 0.406], device)?
            .to_dtype(dtype)?
            .reshape((1, 3, 1, 1))?;
        let std = Tensor::new(&[0.229f32, 0.224, 0.225], device)?
            .to_dtype(dtype)?
            .reshape((1, 3, 1, 1))?;
        Ok(Self {
            stages,
            mean,
            std,
            normalize: cfg.normalize,
        })
    }

    pub fn num_taps(&self) -> usize {
        self.stages.len()
    }

    /// Bitwise copy of the extractor weights, for frozen-contract checks.
    pub fn weight_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for conv in self.stages.iter().flatten() {
            out.extend(super::params::tensor_bytes(conv.weight())?);
            if let Some(b) = conv.bias() {
                out.extend(super::params::tensor_bytes(b)?);
            }
        }
        Ok(out)
    }

    /// Feature maps at each tap for a `[-1, 1]` image batch.
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let x01 = ((x + 1.0)? * 0.5)?;
        let mut h = x01.broadcast_sub(&self.mean)?.broadcast_div(&self.std)?;
        let mut taps = Vec::with_capacity(self.stages.len());
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 {
                h = max_pool_2x2(&h)?;
            }
            for conv in stage {
                h = conv.forward(&h)?.relu()?;
            }
            taps.push(h.clone());
        }
        Ok(taps)
    }

    /// Sum over taps of the squared L2 distance between per-sample
    /// unit-normalized feature maps, averaged over the batch.
    pub fn distance(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let fa = self.features(a)?;
        let fb = self.features(b)?;
        let batch = a.dims4()?.0;
        let mut total: Option<Tensor> = None;
        for (ta, tb) in fa.iter().zip(&fb) {
            let (ta, tb) = (ta.flatten_from(1)?, tb.flatten_from(1)?);
            let (ta, tb) = if self.normalize {
                (unit(&ta)?, unit(&tb)?)
            } else {
                (ta, tb)
            };
            let d = (ta - tb)?.sqr()?.sum_all()?;
            total = Some(match total {
                None => d,
                Some(t) => (t + d)?,
            });
        }
        Ok((total.expect("at least one tap") / batch as f64)?)
    }
}

fn unit(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(1)? + 1e-12)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}
