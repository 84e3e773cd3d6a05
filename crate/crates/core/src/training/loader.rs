use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::Rng;

use super::config::Task;
use crate::data::{
    center_patch, prepare_patch, DatasetManifest, ImageTensor, LabelSet, PatchMode, PatchPolicy,
    Split,
};
use crate::error::{GfdError, Result};

/// A batch of patches with their training labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Positions of real images (label 0) in the batch.
    pub fn real_positions(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == 0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Decodes images on demand, optionally keeping them in memory.
#[derive(Debug, Default)]
pub struct ImageCache {
    enabled: bool,
    images: HashMap<PathBuf, ImageTensor>,
}

impl ImageCache {
    pub fn new(enabled: bool) -> Self {
        Self {
            enabled,
            images: HashMap::new(),
        }
    }

    pub fn get(&mut self, path: &Path) -> Result<ImageTensor> {
        if let Some(img) = self.images.get(path) {
            return Ok(img.clone());
        }
        let img = ImageTensor::load(path)?;
        if self.enabled {
            self.images.insert(path.to_path_buf(), img.clone());
        }
        Ok(img)
    }
}

/// Training label taxonomy for a task: the manifest's labels for attribution,
/// `{real, fake}` for detection.
pub fn task_labels(manifest: &DatasetManifest, task: Task) -> LabelSet {
    match task {
        Task::Attribution => manifest.labels.clone(),
        Task::Detection => LabelSet::binary(),
    }
}

/// Maps a manifest label index to the task's label index.
pub fn task_label(index: usize, task: Task) -> usize {
    match task {
        Task::Attribution => index,
        Task::Detection => usize::from(index != 0),
    }
}

/// Class-balanced sampler: batch slot `k` of the batch starting at `cursor`
/// draws from class `(cursor + k) mod K`, so any batch of two or more
/// samples contains a real image.
pub struct BalancedSampler {
    groups: Vec<Vec<PathBuf>>,
    policy: PatchPolicy,
    cache: ImageCache,
}

impl BalancedSampler {
    pub fn new(
        manifest: &DatasetManifest,
        split: Split,
        task: Task,
        policy: PatchPolicy,
        cache: bool,
    ) -> Result<Self> {
        manifest.require_split(split)?;
        let k = task_labels(manifest, task).len();
        let mut groups = vec![Vec::new(); k];
        for (path, label) in manifest.samples(split) {
            groups[task_label(label, task)].push(path);
        }
        Ok(Self {
            groups,
            policy: policy.with_mode(PatchMode::Train),
            cache: ImageCache::new(cache),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.groups.len()
    }

    pub fn batch<R: Rng + ?Sized>(
        &mut self,
        cursor: usize,
        size: usize,
        rng: &mut R,
        dtype: DType,
        device: &Device,
    ) -> Result<Batch> {
        if size == 0 {
            return Err(GfdError::Config("batch size must be positive".into()));
        }
        let k = self.groups.len();
        let mut patches = Vec::with_capacity(size);
        let mut labels = Vec::with_capacity(size);
        for slot in 0..size {
            let label = (cursor + slot) % k;
            let group = &self.groups[label];
            let path = &group[rng.random_range(0..group.len())];
            let img = self.cache.get(path)?;
            patches.push(prepare_patch(&img, &self.policy, rng)?);
            labels.push(label);
        }
        let refs: Vec<&ImageTensor> = patches.iter().collect();
        Ok(Batch {
            images: ImageTensor::stack(&refs, dtype, device)?,
            labels,
        })
    }
}

/// Carrier index for every batch slot, drawn uniformly with replacement from
/// the real images of the batch.
pub fn sample_carriers<R: Rng + ?Sized>(labels: &[usize], rng: &mut R) -> Result<Vec<u32>> {
    let reals: Vec<u32> = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == 0)
        .map(|(i, _)| i as u32)
        .collect();
    if reals.is_empty() {
        return Err(GfdError::NoCarrier);
    }
    Ok(labels
        .iter()
        .map(|_| reals[rng.random_range(0..reals.len())])
        .collect())
}

/// Loads every sample of a split as a center-cropped patch.
pub fn load_eval_split(
    manifest: &DatasetManifest,
    split: Split,
    policy: &PatchPolicy,
    task: Task,
) -> Result<Vec<(PathBuf, ImageTensor, usize)>> {
    manifest
        .samples(split)
        .into_iter()
        .map(|(path, label)| {
            let img = ImageTensor::load(&path)?;
            let patch = center_patch(&img, policy)?;
            Ok((path, patch, task_label(label, task)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn carriers_are_real_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let labels = [0, 1, 2, 0, 1, 2];
        let idx = sample_carriers(&labels, &mut rng).unwrap();
        assert_eq!(idx.len(), 6);
        assert!(idx.iter().all(|&i| labels[i as usize] == 0));
    }

    #[test]
    fn no_real_image_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_carriers(&[1, 2], &mut rng),
            Err(GfdError::NoCarrier)
        ));
    }

    #[test]
    fn detection_collapses_generators() {
        assert_eq!(task_label(0, Task::Detection), 0);
        assert_eq!(task_label(3, Task::Detection), 1);
        assert_eq!(task_label(3, Task::Attribution), 3);
    }
}
