use std::path::Path;

use ndarray::{Array3, Zip};

use super::image::ImageTensor;
use super::label::SourceLabel;
use crate::error::{GfdError, Result};

/// A signed residual map with the spatial shape of the patch that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub residual: Array3<f32>,
    /// Label of the image the fingerprint was extracted from, when known.
    pub origin: Option<SourceLabel>,
}

impl Fingerprint {
    pub fn new(residual: Array3<f32>, origin: Option<SourceLabel>) -> Self {
        Self { residual, origin }
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.residual.shape();
        [s[0], s[1], s[2]]
    }

    /// Visualization remap `(x - min) / (max - min)` to 8 bits; constant maps go to 0.
    pub fn visualize(&self) -> image::RgbImage {
        let min = self.residual.iter().copied().fold(f32::INFINITY, f32::min);
        let max = self
            .residual
            .iter()
            .copied()
            .fold(f32::NEG_INFINITY, f32::max);
        let span = max - min;
        let [_, h, w] = self.shape();
        image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let px = |c: usize| {
                let v = self.residual[[c, y as usize, x as usize]];
                if span > 0.0 {
                    ((v - min) / span * 255.0).round() as u8
                } else {
                    0
                }
            };
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    /// Writes the raw residual as a float32 `.npy` array `[3, H, W]`.
    pub fn save_npy(&self, path: &Path) -> Result<()> {
        ndarray_npy::write_npy(path, &self.residual).map_err(|e| GfdError::Npy(e.to_string()))
    }

    pub fn load_npy(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(GfdError::MissingFile(path.to_path_buf()));
        }
        let residual: Array3<f32> =
            ndarray_npy::read_npy(path).map_err(|e| GfdError::Npy(e.to_string()))?;
        if residual.shape()[0] != 3 {
            return Err(GfdError::ShapeMismatch {
                expected: vec![3],
                got: vec![residual.shape()[0]],
            });
        }
        Ok(Self::new(residual, None))
    }
}

/// A real carrier image with a planted fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintedImage {
    pub image: ImageTensor,
    pub origin_label: Option<SourceLabel>,
    /// Identifier of the real carrier image (path or batch position).
    pub carrier: String,
}

/// Plants `fp` on a real carrier: `clamp(carrier + residual, -1, 1)`.
pub fn composite(
    fp: &Fingerprint,
    carrier: &ImageTensor,
    carrier_id: impl Into<String>,
) -> Result<FingerprintedImage> {
    if fp.shape() != carrier.shape() {
        return Err(GfdError::ShapeMismatch {
            expected: carrier.shape().to_vec(),
            got: fp.shape().to_vec(),
        });
    }
    let mut out = carrier.pixels().clone();
    Zip::from(&mut out)
        .and(&fp.residual)
        .for_each(|o, &r| *o = (*o + r).clamp(-1.0, 1.0));
    Ok(FingerprintedImage {
        image: ImageTensor::new(out)?,
        origin_label: fp.origin.clone(),
        carrier: carrier_id.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn label() -> SourceLabel {
        SourceLabel {
            index: 1,
            name: "ganA".into(),
            is_real: false,
        }
    }

    #[test]
    fn zero_fingerprint_is_identity() {
        let carrier = ImageTensor::new(Array3::from_shape_fn((3, 4, 4), |(c, y, x)| {
            (c + y + x) as f32 / 20.0
        }))
        .unwrap();
        let fp = Fingerprint::new(Array3::zeros((3, 4, 4)), Some(label()));
        let out = composite(&fp, &carrier, "c0").unwrap();
        assert_eq!(out.image, carrier);
        assert_eq!(out.origin_label, Some(label()));
        assert_eq!(out.carrier, "c0");
    }

    #[test]
    fn clamps_to_unit_range() {
        let fp = Fingerprint::new(Array3::from_elem((3, 2, 2), 2.0), None);
        let out = composite(&fp, &ImageTensor::zeros(2, 2), "c").unwrap();
        assert!(out.image.pixels().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn shape_mismatch() {
        let fp = Fingerprint::new(Array3::zeros((3, 2, 2)), None);
        assert!(matches!(
            composite(&fp, &ImageTensor::zeros(3, 3), "c"),
            Err(GfdError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn visualization_spans_full_range() {
        let fp = Fingerprint::new(
            Array3::from_shape_fn((3, 2, 2), |(c, y, x)| (c + y + x) as f32 - 1.5),
            None,
        );
        let v = fp.visualize();
        let all: Vec<u8> = v.pixels().flat_map(|p| p.0).collect();
        assert_eq!(*all.iter().min().unwrap(), 0);
        assert_eq!(*all.iter().max().unwrap(), 255);
    }

    proptest! {
        // Dyadic grid values keep the addition exact in f32.
        #[test]
        fn subtracting_carrier_recovers_fingerprint(
            carrier in proptest::collection::vec(-190i32..190, 48),
            pattern in proptest::collection::vec(-60i32..60, 48),
        ) {
            let grid = |v: Vec<i32>| Array3::from_shape_vec((3, 4, 4), v.into_iter().map(|x| x as f32 / 256.0).collect()).unwrap();
            let c = ImageTensor::new(grid(carrier)).unwrap();
            let fp = Fingerprint::new(grid(pattern), None);
            let out = composite(&fp, &c, "c").unwrap();
            for ((o, ci), p) in out.image.pixels().iter().zip(c.pixels()).zip(&fp.residual) {
                prop_assert_eq!(*o - *ci, *p);
            }
        }
    }
}
