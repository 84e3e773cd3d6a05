use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::ImageTensor;
use crate::error::{GfdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchMode {
    /// Uniformly random crop offset.
    Train,
    /// Centered crop offset `floor((S - crop) / 2)`.
    #[default]
    Eval,
}

/// Resize-then-crop policy. 128px sources are upscaled to 512px by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchPolicy {
    /// Square resize target; `None` keeps the native resolution.
    pub resize_to: Option<usize>,
    pub crop: usize,
    #[serde(default)]
    pub mode: PatchMode,
    #[serde(default)]
    pub interpolation: Interpolation,
}

impl Default for PatchPolicy {
    fn default() -> Self {
        Self {
            resize_to: None,
            crop: 224,
            mode: PatchMode::Eval,
            interpolation: Interpolation::Bilinear,
        }
    }
}

impl PatchPolicy {
    /// Default policy for a native resolution: x4 upscale for 128px sources.
    pub fn for_native(native: usize, crop: usize) -> Self {
        let resize_to = if native == 128 { Some(512) } else { None };
        Self {
            resize_to,
            crop,
            ..Self::default()
        }
    }

    pub fn with_mode(mut self, mode: PatchMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 {
            return Err(GfdError::Config("crop must be positive".into()));
        }
        if let Some(r) = self.resize_to {
            if self.crop > r {
                return Err(GfdError::Config(format!(
                    "crop {} exceeds resize target {r}",
                    self.crop
                )));
            }
        }
        Ok(())
    }

    fn resize(&self, img: &ImageTensor) -> ImageTensor {
        match self.resize_to {
            Some(s) => match self.interpolation {
                Interpolation::Bilinear => img.resize_bilinear(s, s),
                Interpolation::Nearest => img.resize_nearest(s, s),
            },
            None => img.clone(),
        }
    }
}

/// Resizes per policy and crops a `crop`x`crop` patch. Returns the patch and
/// its `(top, left)` offset in the resized image.
pub fn prepare_patch_at<R: Rng + ?Sized>(
    img: &ImageTensor,
    policy: &PatchPolicy,
    rng: &mut R,
) -> Result<(ImageTensor, (usize, usize))> {
    policy.validate()?;
    let resized = policy.resize(img);
    let (h, w) = (resized.height(), resized.width());
    let crop = policy.crop;
    if h < crop || w < crop {
        return Err(GfdError::ImageTooSmall {
            size: h.min(w),
            crop,
        });
    }
    let (top, left) = match policy.mode {
        PatchMode::Eval => ((h - crop) / 2, (w - crop) / 2),
        PatchMode::Train => (
            rng.random_range(0..=h - crop),
            rng.random_range(0..=w - crop),
        ),
    };
    Ok((resized.crop(top, left, crop)?, (top, left)))
}

pub fn prepare_patch<R: Rng + ?Sized>(
    img: &ImageTensor,
    policy: &PatchPolicy,
    rng: &mut R,
) -> Result<ImageTensor> {
    prepare_patch_at(img, policy, rng).map(|(p, _)| p)
}

/// Eval-mode patch (centered crop), independent of any random source.
pub fn center_patch(img: &ImageTensor, policy: &PatchPolicy) -> Result<ImageTensor> {
    let policy = policy.with_mode(PatchMode::Eval);
    // Centered offsets never draw from the generator.
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    prepare_patch(img, &policy, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(size: usize) -> ImageTensor {
        ImageTensor::new(Array3::from_shape_fn((3, size, size), |(c, y, x)| {
            ((c * 7 + y * 3 + x) % 200) as f32 / 100.0 - 1.0
        }))
        .unwrap()
    }

    #[test]
    fn eval_center_offset_after_upscale() {
        let policy = PatchPolicy::for_native(128, 224);
        assert_eq!(policy.resize_to, Some(512));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (patch, off) = prepare_patch_at(&ramp(128), &policy, &mut rng).unwrap();
        assert_eq!(off, (144, 144));
        assert_eq!(patch.shape(), [3, 224, 224]);
    }

    #[test]
    fn train_offsets_stay_in_range() {
        let policy = PatchPolicy::for_native(1024, 224).with_mode(PatchMode::Train);
        assert_eq!(policy.resize_to, None);
        let img = ImageTensor::zeros(1024, 1024);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen_nonzero = false;
        for _ in 0..50 {
            let (p, (t, l)) = prepare_patch_at(&img, &policy, &mut rng).unwrap();
            assert!(t <= 800 && l <= 800);
            assert_eq!(p.shape(), [3, 224, 224]);
            seen_nonzero |= t != 400 || l != 400;
        }
        assert!(seen_nonzero);
    }

    #[test]
    fn too_small_is_error() {
        let policy = PatchPolicy::for_native(100, 224);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            prepare_patch(&ImageTensor::zeros(100, 100), &policy, &mut rng),
            Err(GfdError::ImageTooSmall {
                size: 100,
                crop: 224
            })
        ));
    }

    #[test]
    fn eval_is_deterministic_and_train_reproducible() {
        let img = ramp(40);
        let eval = PatchPolicy {
            resize_to: None,
            crop: 32,
            ..Default::default()
        };
        let a = prepare_patch(&img, &eval, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = prepare_patch(&img, &eval, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);

        let train = eval.with_mode(PatchMode::Train);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5)
                .map(|_| prepare_patch(&img, &train, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
    }
}
