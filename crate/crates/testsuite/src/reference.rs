//! Naive reference implementations used as oracles.

use ndarray::{Array2, ArrayView2};

/// Symmetric normalized co-occurrence by visiting every pixel pair whose
/// partner lies `d` pixels away along `theta`, measured counter-clockwise
/// from the positive column axis with rows growing downward.
pub fn glcm_pairs(q: ArrayView2<usize>, levels: usize, d: usize, theta: f64) -> Array2<f64> {
    let (h, w) = q.dim();
    let step_c = (d as f64 * theta.cos()).round() as i64;
    let step_r = -(d as f64 * theta.sin()).round() as i64;
    let mut counts = Array2::<f64>::zeros((levels, levels));
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            let (r2, c2) = (r + step_r, c + step_c);
            if r2 < 0 || c2 < 0 || r2 >= h as i64 || c2 >= w as i64 {
                continue;
            }
            let a = q[[r as usize, c as usize]];
            let b = q[[r2 as usize, c2 as usize]];
            counts[[a, b]] += 1.0;
            counts[[b, a]] += 1.0;
        }
    }
    let total = counts.sum();
    counts / total
}

/// Harmonic-free reference of the GLCM correlation statistic.
pub fn glcm_correlation(p: ArrayView2<f64>) -> f64 {
    let n = p.nrows();
    let (mut mi, mut mj) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            mi += i as f64 * p[[i, j]];
            mj += j as f64 * p[[i, j]];
        }
    }
    let (mut vi, mut vj, mut cov) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            vi += (i as f64 - mi).powi(2) * p[[i, j]];
            vj += (j as f64 - mj).powi(2) * p[[i, j]];
            cov += (i as f64 - mi) * (j as f64 - mj) * p[[i, j]];
        }
    }
    cov / (vi * vj).sqrt()
}
