//! Synthetic planted-pattern dataset: one pool of smooth content images,
//! a real class that leaves them unmodified, and generator classes that each
//! add a fixed periodic pattern.

use std::f32::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ImageTensor, Split};
use crate::error::{GfdError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub pool_size: usize,
    pub native: usize,
    pub num_generators: usize,
    pub amplitude: f32,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            pool_size: 600,
            native: 40,
            num_generators: 2,
            amplitude: 0.05,
            val_fraction: 0.1,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Class name of generator `k` (1-based): `ganA`, `ganB`, ...
pub fn generator_name(k: usize) -> String {
    format!("gan{}", (b'A' + (k - 1) as u8) as char)
}

/// The pattern of generator `k` (1-based) over a `size`x`size` image.
/// Peak magnitude is `amplitude`.
pub fn planted_pattern(k: usize, size: usize, amplitude: f32) -> Array3<f32> {
    let channel = |c: usize| -> f32 {
        match (k + c) % 3 {
            0 => 1.0,
            1 => -0.6,
            _ => 0.8,
        }
    };
    Array3::from_shape_fn((3, size, size), |(c, r, col)| {
        let (r, col) = (r as f32, col as f32);
        let wave = match k {
            1 => (PI * col / 2.0).cos(),
            2 => (2.0 * PI * r / 3.0).cos(),
            _ => (2.0 * PI * (r + col) / (k as f32 + 2.0)).cos(),
        };
        amplitude * channel(c) * wave
    })
}

/// Smooth content: a few low-frequency cosines per channel, within [-0.85, 0.85].
fn content<R: Rng>(size: usize, rng: &mut R) -> Array3<f32> {
    let mut img = Array3::<f32>::zeros((3, size, size));
    let s = size as f32;
    for c in 0..3 {
        let base: f32 = rng.random_range(-0.3..0.3);
        let waves: Vec<(f32, f32, f32, f32)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(-1.5f32..1.5) * 2.0 * PI / s,
                    rng.random_range(-1.5f32..1.5) * 2.0 * PI / s,
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.05f32..0.18),
                )
            })
            .collect();
        for r in 0..size {
            for col in 0..size {
                let mut v = base;
                for &(fx, fy, ph, a) in &waves {
                    v += a * (fx * col as f32 + fy * r as f32 + ph).cos();
                }
                img[[c, r, col]] = v.clamp(-0.85, 0.85);
            }
        }
    }
    img
}

/// A written toy dataset.
#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub class_names: Vec<String>,
    /// Planted pattern per generator class at native size (index 0 is generator 1).
    pub patterns: Vec<Array3<f32>>,
}

/// Writes PNGs under `root/<class>/<split>/NNNN.png` and `root/manifest.json`.
/// Every class shares the same content pool, so the patterns are the only
/// source signal.
pub fn write_toy_dataset(root: &Path, cfg: &ToyConfig) -> Result<ToyDataset> {
    if cfg.pool_size < 3 || cfg.num_generators == 0 || cfg.num_generators > 26 {
        return Err(GfdError::Config(
            "toy dataset needs pool_size >= 3 and 1..=26 generators".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_val = ((cfg.pool_size as f64 * cfg.val_fraction).round() as usize).max(1);
    let n_test = ((cfg.pool_size as f64 * cfg.test_fraction).round() as usize).max(1);
    let n_train = cfg
        .pool_size
        .checked_sub(n_val + n_test)
        .filter(|&n| n > 0)
        .ok_or_else(|| GfdError::Config("toy split fractions leave no training images".into()))?;
    let split_of = |i: usize| {
        if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        }
    };

    let mut class_names = vec!["real".to_string()];
    class_names.extend((1..=cfg.num_generators).map(generator_name));
    let patterns: Vec<_> = (1..=cfg.num_generators)
        .map(|k| planted_pattern(k, cfg.native, cfg.amplitude))
        .collect();
    for name in &class_names {
        for split in [Split::Train, Split::Val, Split::Test] {
            fs::create_dir_all(root.join(name).join(split.name()))?;
        }
    }
    for i in 0..cfg.pool_size {
        let base = content(cfg.native, &mut rng);
        let split = split_of(i);
        for (k, name) in class_names.iter().enumerate() {
            let pixels = if k == 0 {
                base.clone()
            } else {
                &base + &patterns[k - 1]
            };
            let path = root
                .join(name)
                .join(split.name())
                .join(format!("{i:04}.png"));
            ImageTensor::new(pixels)?.save_png(&path)?;
        }
    }

    let classes: Vec<_> = class_names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let glob = |s: Split| vec![format!("{name}/{}/*.png", s.name())];
            serde_json::json!({
                "name": name,
                "is_real": k == 0,
                "train": glob(Split::Train),
                "val": glob(Split::Val),
                "test": glob(Split::Test),
            })
        })
        .collect();
    let manifest = root.join("manifest.json");
    let body = serde_json::json!({ "native_resolution": cfg.native, "classes": classes });
    fs::write(&manifest, serde_json::to_string_pretty(&body)? + "\n")?;
    Ok(ToyDataset {
        root: root.to_path_buf(),
        manifest,
        class_names,
        patterns,
    })
}

/// Subtracts each channel's mean and flattens.
pub fn dc_removed(x: &Array3<f32>) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for ch in x.outer_iter() {
        let mean = ch.iter().map(|&v| f64::from(v)).sum::<f64>() / ch.len() as f64;
        out.extend(ch.iter().map(|&v| f64::from(v) - mean));
    }
    out
}

/// Cosine similarity; zero when either side is all zeros.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Pearson correlation of the DC-removed maps. After per-channel mean
/// removal the global mean is zero, so this is their cosine.
pub fn pearson_dc_removed(a: &Array3<f32>, b: &Array3<f32>) -> f64 {
    cosine(&dc_removed(a), &dc_removed(b))
}

/// `size`x`size` window of a pattern at `(top, left)`.
pub fn crop_pattern(pattern: &Array3<f32>, top: usize, left: usize, size: usize) -> Array3<f32> {
    pattern
        .slice(ndarray::s![.., top..top + size, left..left + size])
        .to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_manifest;

    #[test]
    fn patterns_are_distinct_and_bounded() {
        let a = planted_pattern(1, 40, 0.05);
        let b = planted_pattern(2, 40, 0.05);
        assert!(a.iter().all(|v| v.abs() <= 0.05 + 1e-7));
        assert!(a.iter().zip(b.iter()).any(|(x, y)| (x - y).abs() > 0.01));
    }

    #[test]
    fn pearson_ignores_offsets_and_scale() {
        let a = planted_pattern(1, 16, 0.05);
        let b = a.mapv(|v| 3.0 * v + 0.7);
        assert!((pearson_dc_removed(&a, &b) - 1.0).abs() < 1e-9);
        assert!((pearson_dc_removed(&a, &a.mapv(|v| -v)) + 1.0).abs() < 1e-9);
    }

    #[test]
    fn writes_a_loadable_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ToyConfig {
            pool_size: 10,
            ..Default::default()
        };
        let toy = write_toy_dataset(dir.path(), &cfg).unwrap();
        let m = load_manifest(&toy.manifest).unwrap();
        assert_eq!(m.labels.names(), vec!["real", "ganA", "ganB"]);
        assert_eq!(m.samples(Split::Train).len(), 3 * 8);
        m.require_split(Split::Test).unwrap();
    }
}
