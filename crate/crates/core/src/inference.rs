//! Attribution, detection, fingerprint extraction and the evaluation harness.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{center_patch, DatasetManifest, Fingerprint, ImageTensor, LabelSet, Split};
use crate::error::{GfdError, Result};
use crate::networks::{Generator, Head, Prediction};
use crate::training::checkpoint::{load_network, read_config, CheckpointConfig};
use crate::training::Task;

/// Images per forward pass during batched inference.
pub const EVAL_BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Test images come from the training generators.
    Closed,
    /// Unseen generators, labeled with the training taxonomy.
    Open,
}

impl std::str::FromStr for EvalMode {
    type Err = GfdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed" => Ok(Self::Closed),
            "open" => Ok(Self::Open),
            _ => Err(GfdError::Config(format!(
                "unknown eval mode '{s}' (expected closed or open)"
            ))),
        }
    }
}

/// Binary decision derived from a prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub is_fake: bool,
    /// Probability mass on the non-real classes.
    pub score: f64,
    pub prediction: Prediction,
}

impl Detection {
    pub fn from_prediction(prediction: Prediction) -> Self {
        let score = 1.0 - prediction.probabilities()[0];
        Self {
            is_fake: score > 0.5,
            score,
            prediction,
        }
    }
}

/// Accuracy of one manifest class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceBreakdown {
    pub source: String,
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub task: Task,
    pub labels: Vec<String>,
    pub num_samples: usize,
    pub overall_accuracy: f64,
    /// `None` for classes without samples.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Per manifest class; for detection this is the per-test-set breakdown.
    pub per_source: Vec<SourceBreakdown>,
}

/// One evaluation sample: center patch, task label, manifest source name.
pub struct EvalSample {
    pub patch: ImageTensor,
    pub label: usize,
    pub source: String,
}

/// Logits `H(G_enc(x))` for a `[B, 3, H, W]` batch.
pub fn head_logits(generator: &Generator, head: &Head, x: &Tensor) -> Result<Tensor> {
    head.forward(&generator.encode(x, false)?)
}

pub fn predict_patches(
    generator: &Generator,
    head: &Head,
    patches: &[&ImageTensor],
) -> Result<Vec<Prediction>> {
    let store = generator.store();
    let mut out = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(EVAL_BATCH) {
        let x = ImageTensor::stack(chunk, store.dtype(), store.device())?;
        out.extend(Prediction::from_tensor(&head_logits(generator, head, &x)?)?);
    }
    Ok(out)
}

/// Accuracy, confusion matrix and per-source breakdown over prepared samples.
pub fn evaluate_samples(
    generator: &Generator,
    head: &Head,
    labels: &LabelSet,
    task: Task,
    mode: EvalMode,
    samples: &[EvalSample],
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(GfdError::Config("no samples to evaluate".into()));
    }
    let k = labels.len();
    let patches: Vec<&ImageTensor> = samples.iter().map(|s| &s.patch).collect();
    let predictions = predict_patches(generator, head, &patches)?;
    let mut confusion = vec![vec![0usize; k]; k];
    let mut sources: Vec<SourceBreakdown> = Vec::new();
    let mut source_index: HashMap<&str, usize> = HashMap::new();
    for (s, p) in samples.iter().zip(&predictions) {
        if s.label >= k {
            return Err(GfdError::LabelOutOfRange {
                index: s.label,
                num_classes: k,
            });
        }
        confusion[s.label][p.label] += 1;
        let i = *source_index.entry(s.source.as_str()).or_insert_with(|| {
            sources.push(SourceBreakdown {
                source: s.source.clone(),
                samples: 0,
                correct: 0,
                accuracy: 0.0,
            });
            sources.len() - 1
        });
        sources[i].samples += 1;
        sources[i].correct += usize::from(p.label == s.label);
    }
    for s in &mut sources {
        s.accuracy = s.correct as f64 / s.samples as f64;
    }
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[i] as f64 / n as f64)
        })
        .collect();
    Ok(EvalReport {
        mode,
        task,
        labels: labels.names(),
        num_samples: samples.len(),
        overall_accuracy: correct as f64 / samples.len() as f64,
        per_class_accuracy,
        confusion,
        per_source: sources,
    })
}

/// Maps every manifest class to a training label index. Attribution matches
/// by name (closed mode additionally requires the same class set); detection
/// maps the real class to 0 and everything else to 1.
pub fn map_taxonomy(
    manifest: &DatasetManifest,
    labels: &LabelSet,
    task: Task,
    mode: EvalMode,
) -> Result<Vec<usize>> {
    match task {
        Task::Detection => Ok(manifest
            .classes
            .iter()
            .map(|c| usize::from(!c.label.is_real))
            .collect()),
        Task::Attribution => {
            if mode == EvalMode::Closed && manifest.labels.len() != labels.len() {
                return Err(GfdError::Taxonomy(format!(
                    "manifest has {} classes, checkpoint was trained on {}",
                    manifest.labels.len(),
                    labels.len()
                )));
            }
            manifest
                .classes
                .iter()
                .map(|c| match labels.by_name(&c.label.name) {
                    Some(l) if l.is_real == c.label.is_real => Ok(l.index),
                    _ => Err(GfdError::Taxonomy(format!(
                        "class '{}' is not in the trained taxonomy {:?}",
                        c.label.name,
                        labels.names()
                    ))),
                })
                .collect()
        }
    }
}

/// Center patches of a split with their mapped labels.
pub fn load_samples(
    manifest: &DatasetManifest,
    split: Split,
    cfg: &CheckpointConfig,
    mode: EvalMode,
) -> Result<Vec<EvalSample>> {
    let mapping = map_taxonomy(manifest, &cfg.labels, cfg.train.task, mode)?;
    let mut out = Vec::new();
    for (class, &label) in manifest.classes.iter().zip(&mapping) {
        for path in class.files(split) {
            let patch = center_patch(&ImageTensor::load(path)?, &cfg.patch)?;
            out.push(EvalSample {
                patch,
                label,
                source: class.label.name.clone(),
            });
        }
    }
    Ok(out)
}

/// A trained generator and head restored from a checkpoint.
pub struct InferenceModel {
    pub config: CheckpointConfig,
    pub generator: Generator,
    pub head: Head,
}

impl InferenceModel {
    pub fn load(dir: &Path, device: &Device) -> Result<Self> {
        let config = read_config(dir)?;
        let generator = Generator::new(&config.model.generator, DType::F32, device, 0)?;
        let head = Head::new(
            config.model.generator.head_name(),
            generator.latent_channels(),
            config.labels.len(),
            DType::F32,
            device,
            0,
        )?;
        load_network(dir, "G", generator.store())?;
        load_network(dir, "H", head.store())?;
        Ok(Self {
            config,
            generator,
            head,
        })
    }

    pub fn labels(&self) -> &LabelSet {
        &self.config.labels
    }

    pub fn patch(&self, img: &ImageTensor) -> Result<ImageTensor> {
        center_patch(img, &self.config.patch)
    }

    /// Source prediction on the center patch.
    pub fn attribute(&self, img: &ImageTensor) -> Result<Prediction> {
        Ok(self.attribute_batch(std::slice::from_ref(img))?.remove(0))
    }

    pub fn attribute_batch(&self, imgs: &[ImageTensor]) -> Result<Vec<Prediction>> {
        let patches = imgs
            .iter()
            .map(|i| self.patch(i))
            .collect::<Result<Vec<_>>>()?;
        predict_patches(
            &self.generator,
            &self.head,
            &patches.iter().collect::<Vec<_>>(),
        )
    }

    /// Real/fake decision; the score is the softmax mass off the real class.
    pub fn detect(&self, img: &ImageTensor) -> Result<Detection> {
        self.attribute(img).map(Detection::from_prediction)
    }

    pub fn detect_batch(&self, imgs: &[ImageTensor]) -> Result<Vec<Detection>> {
        Ok(self
            .attribute_batch(imgs)?
            .into_iter()
            .map(Detection::from_prediction)
            .collect())
    }

    /// Decoder output on the center patch, in eval mode.
    pub fn extract_fingerprint(&self, img: &ImageTensor) -> Result<Fingerprint> {
        let patch = self.patch(img)?;
        let store = self.generator.store();
        let (fp, _) = self
            .generator
            .forward_t(&patch.to_tensor(store.dtype(), store.device())?, false)?;
        let residual = ImageTensor::unstack(&fp)?.remove(0).into_pixels();
        Ok(Fingerprint::new(residual, None))
    }

    pub fn evaluate(&self, manifest: &DatasetManifest, mode: EvalMode) -> Result<EvalReport> {
        self.evaluate_split(manifest, Split::Test, mode)
    }

    pub fn evaluate_split(
        &self,
        manifest: &DatasetManifest,
        split: Split,
        mode: EvalMode,
    ) -> Result<EvalReport> {
        manifest.require_split(split)?;
        let samples = load_samples(manifest, split, &self.config, mode)?;
        evaluate_samples(
            &self.generator,
            &self.head,
            &self.config.labels,
            self.config.train.task,
            mode,
            &samples,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detection_threshold_matches_argmax_on_binary_heads() {
        for logits in [vec![2.0f32, -1.0], vec![-0.5, 0.5], vec![0.3, 0.2]] {
            let d = Detection::from_prediction(Prediction::from_logits(logits).unwrap());
            assert_eq!(d.is_fake, d.prediction.label == 1);
        }
    }

    #[test]
    fn eval_mode_parses() {
        assert_eq!("open".parse::<EvalMode>().unwrap(), EvalMode::Open);
        assert!("bogus".parse::<EvalMode>().is_err());
    }
}
