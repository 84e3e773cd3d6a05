//! Objective terms of the generator phase and the discriminator/classifier
//! phase, and their weighted composition.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{GfdError, Result};

/// Numerically stable `log(1 + exp(x))`; the shift is detached so the
/// gradient is exactly `sigmoid(x)` everywhere, including `x = 0`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let m = x.relu()?.detach();
    let s = (m.neg()?.exp()? + (x - &m)?.exp()?)?;
    Ok((m + s.log()?)?)
}

/// Mean cross-entropy of `[B, K]` logits against class indices.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, k) = logits.dims2()?;
    if labels.len() != b {
        return Err(GfdError::ShapeMismatch {
            expected: vec![b],
            got: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(GfdError::LabelOutOfRange {
            index: bad,
            num_classes: k,
        });
    }
    let max = logits.max_keepdim(D::Minus1)?.detach();
    let shifted = logits.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    let idx: Vec<u32> = labels.iter().map(|&l| l as u32).collect();
    let idx = Tensor::from_vec(idx, (b, 1), logits.device())?;
    let picked = shifted.gather(&idx, 1)?;
    Ok((lse - picked)?.mean_all()?)
}

/// Discriminator loss: binary cross-entropy with positives -> 1 and
/// fingerprinted -> 0, averaged over the patch grid and batch, then over the
/// two sides.
pub fn adversarial_d(real_scores: &Tensor, fp_scores: &Tensor) -> Result<Tensor> {
    let real = softplus(&real_scores.neg()?)?.mean_all()?;
    let fake = softplus(fp_scores)?.mean_all()?;
    Ok(((real + fake)? * 0.5)?)
}

/// Non-saturating generator loss `-mean(log sigmoid(D(x_fp)))`.
pub fn adversarial_g(fp_scores: &Tensor) -> Result<Tensor> {
    Ok(softplus(&fp_scores.neg()?)?.mean_all()?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Which generator-phase terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossToggles {
    pub latent: bool,
    pub adversarial: bool,
    pub aux_cls: bool,
    pub perceptual: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Ablation::Full.toggles()
    }
}

/// The ablation variants: head-only G, plus D and/or C, plus the perceptual term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    #[serde(rename = "G")]
    G,
    #[serde(rename = "G+D")]
    GD,
    #[serde(rename = "G+C")]
    GC,
    #[serde(rename = "G+D+C")]
    GDC,
    #[serde(rename = "G+D+C+percept")]
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::G,
        Ablation::GD,
        Ablation::GC,
        Ablation::GDC,
        Ablation::Full,
    ];

    pub fn toggles(self) -> LossToggles {
        let (adversarial, aux_cls, perceptual) = match self {
            Ablation::G => (false, false, false),
            Ablation::GD => (true, false, false),
            Ablation::GC => (false, true, false),
            Ablation::GDC => (true, true, false),
            Ablation::Full => (true, true, true),
        };
        LossToggles {
            latent: true,
            adversarial,
            aux_cls,
            perceptual,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
            GfdError::Config(format!(
                "unknown ablation '{s}' (expected G, G+D, G+C, G+D+C, G+D+C+percept)"
            ))
        })
    }
}

/// Generator-objective weights and term toggles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub latent: f64,
    pub adversarial: f64,
    pub aux_cls: f64,
    pub perceptual: f64,
    #[serde(default)]
    pub enabled: LossToggles,
}

impl LossWeights {
    /// Attribution defaults (10, 1e-1, 1, 1).
    pub fn attribution() -> Self {
        Self {
            latent: 10.0,
            adversarial: 1e-1,
            aux_cls: 1.0,
            perceptual: 1.0,
            enabled: LossToggles::default(),
        }
    }

    /// Detection defaults (10, 1e-2, 1, 1).
    pub fn detection() -> Self {
        Self {
            adversarial: 1e-2,
            ..Self::attribution()
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.enabled = ablation.toggles();
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("latent", self.latent),
            ("adversarial", self.adversarial),
            ("aux_cls", self.aux_cls),
            ("perceptual", self.perceptual),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(GfdError::Config(format!(
                    "weight '{name}' must be a non-negative number, got {w}"
                )));
            }
        }
        Ok(())
    }

    /// Weights after applying toggles: a disabled term has weight 0.
    pub fn effective(&self) -> [f64; 4] {
        let e = self.enabled;
        let pick = |on: bool, w: f64| if on { w } else { 0.0 };
        [
            pick(e.latent, self.latent),
            pick(e.adversarial, self.adversarial),
            pick(e.aux_cls, self.aux_cls),
            pick(e.perceptual, self.perceptual),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Classifier pretraining.
    PretrainC,
    /// Generator + head update.
    Generator,
    /// Discriminator + auxiliary classifier update.
    DiscriminatorClassifier,
}

/// Per-term values and the weighted total of one phase. In the
/// discriminator/classifier phase `adversarial` holds the discriminator loss
/// and `aux_cls` the classifier loss on input images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub phase: Phase,
    pub latent: f64,
    pub adversarial: f64,
    pub aux_cls: f64,
    pub perceptual: f64,
    pub total: f64,
}

/// Raw generator-phase term values.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GeneratorTerms {
    pub latent: f64,
    pub adversarial: f64,
    pub aux_cls: f64,
    pub perceptual: f64,
}

/// `w1 L_z + w2 L_adv + w3 L_cls + w4 L_percept`; disabled terms report 0.
pub fn total_g(terms: &GeneratorTerms, w: &LossWeights) -> LossReport {
    let e = w.enabled;
    let keep = |on: bool, v: f64| if on { v } else { 0.0 };
    let t = GeneratorTerms {
        latent: keep(e.latent, terms.latent),
        adversarial: keep(e.adversarial, terms.adversarial),
        aux_cls: keep(e.aux_cls, terms.aux_cls),
        perceptual: keep(e.perceptual, terms.perceptual),
    };
    let [w1, w2, w3, w4] = w.effective();
    LossReport {
        phase: Phase::Generator,
        latent: t.latent,
        adversarial: t.adversarial,
        aux_cls: t.aux_cls,
        perceptual: t.perceptual,
        total: w1 * t.latent + w2 * t.adversarial + w3 * t.aux_cls + w4 * t.perceptual,
    }
}

/// `L_C^cls + L_D^adv`, unweighted.
pub fn total_dc(classifier: f64, discriminator: f64) -> LossReport {
    LossReport {
        phase: Phase::DiscriminatorClassifier,
        latent: 0.0,
        adversarial: discriminator,
        aux_cls: classifier,
        perceptual: 0.0,
        total: classifier + discriminator,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn t(v: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(v.to_vec(), shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn cross_entropy_reference_values() {
        let uniform = t(&[0.3; 5], &[1, 5]);
        assert!(
            (scalar(&cross_entropy(&uniform, &[2]).unwrap()).unwrap() - 5f64.ln()).abs() < 1e-12
        );
        let two = t(&[1.0, 1.0], &[1, 2]);
        assert!((scalar(&cross_entropy(&two, &[0]).unwrap()).unwrap() - 2f64.ln()).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 100.0] {
            let l =
                scalar(&cross_entropy(&t(&[margin, 0.0, 0.0], &[1, 3]), &[0]).unwrap()).unwrap();
            assert!(l < prev && l >= 0.0);
            prev = l;
        }
        assert!(prev < 1e-40);
        assert!(matches!(
            cross_entropy(&two, &[2]),
            Err(GfdError::LabelOutOfRange {
                index: 2,
                num_classes: 2
            })
        ));
    }

    #[test]
    fn adversarial_reference_values() {
        let zeros = t(&[0.0; 8], &[2, 1, 2, 2]);
        let ln2 = 2f64.ln();
        assert!((scalar(&adversarial_d(&zeros, &zeros).unwrap()).unwrap() - ln2).abs() < 1e-12);
        assert!((scalar(&adversarial_g(&zeros).unwrap()).unwrap() - ln2).abs() < 1e-12);
        let big = t(&[60.0; 8], &[2, 1, 2, 2]);
        let neg = t(&[-60.0; 8], &[2, 1, 2, 2]);
        assert!(scalar(&adversarial_d(&big, &neg).unwrap()).unwrap() < 1e-20);
        assert!(scalar(&adversarial_g(&big).unwrap()).unwrap() < 1e-20);
        let huge = t(&[1e4, -1e4], &[2]);
        let sp: Vec<f64> = softplus(&huge).unwrap().to_vec1().unwrap();
        assert_eq!(sp, vec![1e4, 0.0]);
    }

    #[test]
    fn weighted_totals() {
        let ones = GeneratorTerms {
            latent: 1.0,
            adversarial: 1.0,
            aux_cls: 1.0,
            perceptual: 1.0,
        };
        let w = LossWeights {
            latent: 10.0,
            adversarial: 0.1,
            aux_cls: 1.0,
            perceptual: 1.0,
            enabled: LossToggles::default(),
        };
        assert_eq!(total_g(&ones, &w).total, 12.1);
        assert_eq!(LossWeights::attribution(), w);
        assert_eq!(LossWeights::detection().adversarial, 1e-2);

        let g_only = total_g(&ones, &w.with_ablation(Ablation::G));
        assert_eq!(
            (g_only.adversarial, g_only.aux_cls, g_only.perceptual),
            (0.0, 0.0, 0.0)
        );
        assert_eq!(g_only.total, 10.0);

        assert_eq!(total_dc(1.0, 1.0).total, 2.0);
        assert_eq!(total_dc(0.0, 0.7).total, 0.7);
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            let name = serde_json::to_value(a).unwrap();
            assert_eq!(Ablation::parse(name.as_str().unwrap()).unwrap(), a);
        }
        assert!(Ablation::parse("G+X").is_err());
        let bad = LossWeights {
            latent: -1.0,
            ..LossWeights::attribution()
        };
        assert!(bad.validate().is_err());
    }
}
