//! Trainable networks G (encoder + decoder), H, D, C and the frozen extractor F.

mod backbone;
mod classifier;
mod discriminator;
mod generator;
pub mod layers;
mod params;
mod perceptual;

use std::collections::BTreeMap;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

pub use backbone::{Backbone, BackboneKind, BackboneSpec, EncoderLayout, EncoderOutput};
pub use classifier::Classifier;
pub use discriminator::{DiscriminatorConfig, PatchGan};
pub use generator::{Generator, GeneratorConfig, Head};
pub use params::{ParamRecord, ParamStore};
pub use perceptual::{Perceptual, PerceptualConfig, PerceptualWeights, CACHE_ENV, CACHE_FILE};

use crate::error::{GfdError, Result};

/// A source prediction derived from one row of logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub logits: Vec<f32>,
    pub label: usize,
    pub confidence: f32,
}

impl Prediction {
    pub fn from_logits(logits: Vec<f32>) -> Result<Self> {
        if logits.is_empty() {
            return Err(GfdError::Config("empty logits".into()));
        }
        let probs = softmax(&logits);
        let label = argmax(&logits);
        Ok(Self {
            confidence: probs[label] as f32,
            label,
            logits,
        })
    }

    /// One prediction per row of a `[B, K]` logits tensor.
    pub fn from_tensor(logits: &Tensor) -> Result<Vec<Self>> {
        let rows: Vec<Vec<f32>> = logits.to_dtype(DType::F32)?.to_vec2()?;
        rows.into_iter().map(Self::from_logits).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.logits)
    }
}

/// Numerically stable softmax in double precision.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&l| (l as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the first maximal entry.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Parameter names and shapes of encoder + head, with the encoder prefix
/// stripped, so it can be compared against a standalone [`Classifier`].
pub fn encoder_head_shapes(generator: &Generator, head: &Head) -> BTreeMap<String, Vec<usize>> {
    let mut out: BTreeMap<String, Vec<usize>> = generator
        .store()
        .shapes()
        .into_iter()
        .filter_map(|(k, v)| k.strip_prefix("enc.").map(|s| (s.to_string(), v)))
        .collect();
    out.extend(head.store().shapes());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn softmax_sums_to_one_and_dominant_logit_wins() {
        let p = Prediction::from_logits(vec![10.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.label, 0);
        assert!(p.confidence > 0.999);
        assert!((p.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn generator_shapes_and_errors() {
        let dev = Device::Cpu;
        let g = Generator::new(&BackboneSpec::unet(4, 5), DType::F32, &dev, 0).unwrap();
        let x = Tensor::zeros((1, 3, 224, 224), DType::F32, &dev).unwrap();
        let (fp, z) = g.forward_t(&x, false).unwrap();
        assert_eq!(fp.dims(), &[1, 3, 224, 224]);
        assert_eq!(&z.dims()[2..], &[7, 7]);

        let g6 = Generator::new(&BackboneSpec::unet(4, 6), DType::F32, &dev, 0).unwrap();
        assert!(matches!(
            g6.forward_t(&x, false),
            Err(GfdError::NotDivisible {
                size: 224,
                depth: 6
            })
        ));
        assert!(BackboneSpec::unet(4, 1).validate().is_err());
    }

    #[test]
    fn head_at_zero_latent_returns_bias() {
        let dev = Device::Cpu;
        let head = Head::new("fc", 8, 5, DType::F32, &dev, 0).unwrap();
        let bias = Tensor::new(&[0.5f32, -1.0, 2.0, 0.0, 3.0], &dev).unwrap();
        head.store().get("fc.bias").unwrap().set(&bias).unwrap();
        let z = Tensor::zeros((1, 8, 2, 2), DType::F32, &dev).unwrap();
        let logits: Vec<Vec<f32>> = head.forward(&z).unwrap().to_vec2().unwrap();
        assert_eq!(logits[0], vec![0.5, -1.0, 2.0, 0.0, 3.0]);
        let wrong = Tensor::zeros((1, 4, 2, 2), DType::F32, &dev).unwrap();
        assert!(matches!(
            head.forward(&wrong),
            Err(GfdError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn patchgan_emits_a_score_grid() {
        let dev = Device::Cpu;
        let d = PatchGan::new(
            &DiscriminatorConfig { base_channels: 4 },
            DType::F32,
            &dev,
            0,
        )
        .unwrap();
        let x = Tensor::zeros((1, 3, 224, 224), DType::F32, &dev).unwrap();
        let s = d.forward(&x).unwrap();
        assert_eq!(s.dims(), &[1, 1, 27, 27]);

        for (name, var) in d.store().named_vars() {
            let fill = if name == "out.bias" { 0.25 } else { 0.0 };
            var.set(
                &var.as_tensor()
                    .ones_like()
                    .unwrap()
                    .affine(fill, 0.0)
                    .unwrap(),
            )
            .unwrap();
        }
        let x = Tensor::randn(0f32, 1., (2, 3, 32, 32), &dev).unwrap();
        let s: Vec<f32> = d
            .forward(&x)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        assert!(s.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn small_resnet_and_densenet_encoders_run() {
        let dev = Device::Cpu;
        let x = Tensor::randn(0f32, 1., (2, 3, 64, 64), &dev).unwrap();
        for spec in [
            BackboneSpec::resnet(4, vec![1, 1, 1, 1]),
            BackboneSpec::densenet(8, 4, vec![1, 2, 1, 1]),
        ] {
            let g = Generator::new(&spec, DType::F32, &dev, 1).unwrap();
            let (fp, z) = g.forward_t(&x, true).unwrap();
            assert_eq!(fp.dims(), &[2, 3, 64, 64]);
            assert_eq!(&z.dims()[2..], &[2, 2]);
            let c = Classifier::new(&spec, 3, DType::F32, &dev, 1).unwrap();
            assert_eq!(c.forward_t(&x, false).unwrap().dims(), &[2, 3]);
        }
    }
}
