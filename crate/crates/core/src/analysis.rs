//! Gray-level co-occurrence (GLCM) correlation of fingerprints and
//! per-population statistics of the resulting vectors.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Fingerprint;
use crate::error::{GfdError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlcmConfig {
    pub distances: Vec<usize>,
    /// Radians, counter-clockwise from the positive column axis.
    pub angles: Vec<f64>,
    pub levels: usize,
    pub symmetric: bool,
}

impl Default for GlcmConfig {
    fn default() -> Self {
        Self {
            distances: vec![2, 4, 8, 16],
            angles: vec![0.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0],
            levels: 64,
            symmetric: true,
        }
    }
}

impl GlcmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.distances.is_empty() || self.angles.is_empty() {
            return Err(GfdError::Config(
                "glcm needs at least one distance and one angle".into(),
            ));
        }
        if self.distances.contains(&0) {
            return Err(GfdError::Config("glcm distances must be >= 1".into()));
        }
        if self.levels < 2 {
            return Err(GfdError::Config("glcm needs at least 2 gray levels".into()));
        }
        Ok(())
    }

    /// Number of `(d, theta)` pairs.
    pub fn len(&self) -> usize {
        self.distances.len() * self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(d, theta)` for each vector position, distance-major.
    pub fn pairs(&self) -> Vec<(usize, f64)> {
        self.distances
            .iter()
            .flat_map(|&d| self.angles.iter().map(move |&a| (d, a)))
            .collect()
    }
}

/// Pixel offset `(dx, dy)` in (column, row) for distance `d` at angle `theta`;
/// rows grow downward, so `theta = pi/2` points up.
pub fn offset(d: usize, theta: f64) -> (i64, i64) {
    let d = d as f64;
    (
        (d * theta.cos()).round() as i64,
        -((d * theta.sin()).round() as i64),
    )
}

/// Uniform binning of the image's `[min, max]` range into `levels` bins;
/// a constant image maps to level 0.
pub fn quantize(img: ArrayView2<f64>, levels: usize) -> Array2<usize> {
    let min = img.iter().copied().fold(f64::INFINITY, f64::min);
    let max = img.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    img.mapv(|v| {
        if span > 0.0 {
            (((v - min) / span * levels as f64).floor() as usize).min(levels - 1)
        } else {
            0
        }
    })
}

/// Normalized co-occurrence matrix of already-quantized levels at offset `(dx, dy)`.
pub fn glcm_quantized(
    q: ArrayView2<usize>,
    levels: usize,
    dx: i64,
    dy: i64,
    symmetric: bool,
) -> Result<Array2<f64>> {
    let (h, w) = q.dim();
    if dx.unsigned_abs() as usize >= w || dy.unsigned_abs() as usize >= h {
        return Err(GfdError::OffsetTooLarge {
            height: h,
            width: w,
            dx,
            dy,
        });
    }
    let mut counts = Array2::<f64>::zeros((levels, levels));
    let rows = (0.max(-dy) as usize)..((h as i64 - dy.max(0)) as usize);
    let cols = (0.max(-dx) as usize)..((w as i64 - dx.max(0)) as usize);
    for r in rows {
        let r2 = (r as i64 + dy) as usize;
        for c in cols.clone() {
            let (i, j) = (q[[r, c]], q[[r2, (c as i64 + dx) as usize]]);
            if i >= levels || j >= levels {
                return Err(GfdError::Config(format!(
                    "gray level {} out of range for {levels} levels",
                    i.max(j)
                )));
            }
            counts[[i, j]] += 1.0;
        }
    }
    if symmetric {
        counts = &counts + &counts.t();
    }
    let total = counts.sum();
    Ok(counts / total)
}

/// Quantizes `img` per `cfg` and returns the normalized GLCM for `(d, theta)`.
pub fn glcm(img: ArrayView2<f64>, d: usize, theta: f64, cfg: &GlcmConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let (dx, dy) = offset(d, theta);
    glcm_quantized(
        quantize(img, cfg.levels).view(),
        cfg.levels,
        dx,
        dy,
        cfg.symmetric,
    )
}

/// `sum P(i,j)(i - mu_i)(j - mu_j) / (sigma_i sigma_j)`, clamped to `[-1, 1]`.
pub fn glcm_correlation(p: ArrayView2<f64>) -> Result<f64> {
    let levels: Vec<f64> = (0..p.nrows().max(p.ncols())).map(|i| i as f64).collect();
    let pi = p.sum_axis(Axis(1));
    let pj = p.sum_axis(Axis(0));
    let mean = |m: &ndarray::Array1<f64>| m.iter().zip(&levels).map(|(w, l)| w * l).sum::<f64>();
    let (mi, mj) = (mean(&pi), mean(&pj));
    let var = |m: &ndarray::Array1<f64>, mu: f64| {
        m.iter()
            .zip(&levels)
            .map(|(w, l)| w * (l - mu).powi(2))
            .sum::<f64>()
    };
    let denom = (var(&pi, mi) * var(&pj, mj)).sqrt();
    if denom <= 1e-12 {
        return Err(GfdError::ZeroVariance);
    }
    let mut cov = 0.0;
    for ((i, j), &v) in p.indexed_iter() {
        cov += v * (i as f64 - mi) * (j as f64 - mj);
    }
    Ok((cov / denom).clamp(-1.0, 1.0))
}

/// Channel-mean gray image of a fingerprint.
pub fn to_gray(fp: &Fingerprint) -> Array2<f64> {
    fp.residual
        .mapv(f64::from)
        .mean_axis(Axis(0))
        .expect("three channels")
}

/// GLCM correlations for every `(d, theta)` pair, distance-major: entry
/// `i * angles.len() + j` holds `(distances[i], angles[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlcmCorrelationVector {
    pub values: Vec<f64>,
}

impl GlcmCorrelationVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn fingerprint_correlation_vector(
    fp: &Fingerprint,
    cfg: &GlcmConfig,
) -> Result<GlcmCorrelationVector> {
    cfg.validate()?;
    let q = quantize(to_gray(fp).view(), cfg.levels);
    let values = cfg
        .pairs()
        .into_iter()
        .map(|(d, theta)| {
            let (dx, dy) = offset(d, theta);
            glcm_correlation(glcm_quantized(q.view(), cfg.levels, dx, dy, cfg.symmetric)?.view())
        })
        .collect::<Result<_>>()?;
    Ok(GlcmCorrelationVector { values })
}

/// Elementwise mean and population variance (divide by n) over the valid
/// vectors of one source. Degenerate fingerprints are skipped and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationStats {
    pub count: usize,
    pub skipped: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn population_stats(fps: &[Fingerprint], cfg: &GlcmConfig) -> Result<PopulationStats> {
    let mut vectors = Vec::with_capacity(fps.len());
    let mut skipped = 0;
    for fp in fps {
        match fingerprint_correlation_vector(fp, cfg) {
            Ok(v) => vectors.push(v),
            Err(GfdError::ZeroVariance) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    stats_of(&vectors, skipped)
}

/// Statistics of precomputed vectors.
pub fn stats_of(vectors: &[GlcmCorrelationVector], skipped: usize) -> Result<PopulationStats> {
    let first = vectors
        .first()
        .ok_or_else(|| GfdError::Config("no valid fingerprints in population".into()))?;
    let (n, k) = (vectors.len(), first.len());
    let data = Array2::from_shape_fn((n, k), |(i, j)| vectors[i].values[j]);
    let mean = data.mean_axis(Axis(0)).expect("nonempty");
    let variance = data.var_axis(Axis(0), 0.0);
    Ok(PopulationStats {
        count: n,
        skipped,
        std: variance.mapv(f64::sqrt).to_vec(),
        mean: mean.to_vec(),
        variance: variance.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    #[test]
    fn offsets_follow_row_down_convention() {
        assert_eq!(offset(2, 0.0), (2, 0));
        assert_eq!(offset(2, PI / 4.0), (1, -1));
        assert_eq!(offset(2, PI / 2.0), (0, -2));
        assert_eq!(offset(2, 3.0 * PI / 4.0), (-1, -1));
        assert_eq!(offset(16, PI / 4.0), (11, -11));
    }

    #[test]
    fn vertical_stripes_at_even_offset_stay_on_the_diagonal() {
        let img = Array2::from_shape_fn((8, 8), |(_, c)| (c % 2) as f64);
        let p = glcm(
            img.view(),
            2,
            0.0,
            &GlcmConfig {
                levels: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(p, array![[0.5, 0.0], [0.0, 0.5]]);
    }

    #[test]
    fn diagonal_matrix_has_unit_correlation() {
        let p = Array2::from_diag(&ndarray::Array1::from_elem(4, 0.25));
        assert!((glcm_correlation(p.view()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_image_has_zero_variance() {
        let img = Array2::from_elem((8, 8), 3.0);
        let p = glcm(img.view(), 2, 0.0, &GlcmConfig::default()).unwrap();
        assert!(matches!(
            glcm_correlation(p.view()),
            Err(GfdError::ZeroVariance)
        ));
    }

    #[test]
    fn offset_larger_than_image_is_an_error() {
        let img = Array2::from_elem((1, 1), 0.0);
        assert!(matches!(
            glcm(img.view(), 2, 0.0, &GlcmConfig::default()),
            Err(GfdError::OffsetTooLarge { .. })
        ));
    }

    #[test]
    fn single_fingerprint_has_zero_variance() {
        let fp = Fingerprint::new(
            Array3::from_shape_fn((3, 40, 40), |(_, r, c)| ((r * 3 + c * 7) % 11) as f32),
            None,
        );
        let s = population_stats(&[fp], &GlcmConfig::default()).unwrap();
        assert_eq!(s.count, 1);
        assert_eq!(s.mean.len(), 16);
        assert!(s.variance.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_fingerprints_are_skipped() {
        let flat = Fingerprint::new(Array3::zeros((3, 40, 40)), None);
        let tex = Fingerprint::new(
            Array3::from_shape_fn((3, 40, 40), |(_, r, c)| ((r + 2 * c) % 5) as f32),
            None,
        );
        let s = population_stats(&[flat, tex], &GlcmConfig::default()).unwrap();
        assert_eq!((s.count, s.skipped), (1, 1));
    }
}
