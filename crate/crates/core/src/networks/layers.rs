//! Building blocks shared by the networks. Parameters are created with
//! constant placeholders and filled by [`ParamStore::init_seeded`].
//!
//! [`ParamStore::init_seeded`]: super::ParamStore::init_seeded

use candle_core::{Module, Tensor, Var, D};
use candle_nn::{Conv2d, Conv2dConfig, Init, Linear, VarBuilder};

use crate::error::Result;

const PLACEHOLDER: Init = Init::Const(0.0);

pub fn conv2d(
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    bias: bool,
    vb: VarBuilder,
) -> Result<Conv2d> {
    let w = vb.get_with_hints((cout, cin, k, k), "weight", PLACEHOLDER)?;
    let b = if bias {
        Some(vb.get_with_hints(cout, "bias", PLACEHOLDER)?)
    } else {
        None
    };
    let cfg = Conv2dConfig {
        padding: pad,
        stride,
        ..Default::default()
    };
    Ok(Conv2d::new(w, b, cfg))
}

pub fn linear(cin: usize, cout: usize, vb: VarBuilder) -> Result<Linear> {
    let w = vb.get_with_hints((cout, cin), "weight", PLACEHOLDER)?;
    let b = vb.get_with_hints(cout, "bias", PLACEHOLDER)?;
    Ok(Linear::new(w, Some(b)))
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// Per-sample, per-channel normalization over the spatial dims with an affine map.
#[derive(Debug, Clone)]
pub struct InstanceNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl InstanceNorm {
    pub fn new(channels: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            weight: vb.get_with_hints(channels, "weight", PLACEHOLDER)?,
            bias: vb.get_with_hints(channels, "bias", PLACEHOLDER)?,
            eps: 1e-5,
        })
    }
}

impl Module for InstanceNorm {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let flat = x.reshape((b, c, h * w))?;
        let mean = flat.mean_keepdim(D::Minus1)?;
        let centered = flat.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered
            .broadcast_div(&(var + self.eps)?.sqrt()?)?
            .reshape((b, c, h, w))?;
        normed
            .broadcast_mul(&self.weight.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.bias.reshape((1, c, 1, 1))?)
    }
}

/// Batch normalization with running statistics, torchvision parameter names.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    weight: Tensor,
    bias: Tensor,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm {
    pub fn new(channels: usize, vb: VarBuilder) -> Result<Self> {
        let rm = vb.get_with_hints(channels, "running_mean", PLACEHOLDER)?;
        let rv = vb.get_with_hints(channels, "running_var", PLACEHOLDER)?;
        Ok(Self {
            weight: vb.get_with_hints(channels, "weight", PLACEHOLDER)?,
            bias: vb.get_with_hints(channels, "bias", PLACEHOLDER)?,
            // Var::from_tensor on a variable shares its storage, so updates land in the store.
            running_mean: Var::from_tensor(&rm)?,
            running_var: Var::from_tensor(&rv)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let (mean, var) = if train {
            let flat = x.transpose(0, 1)?.reshape((c, b * h * w))?;
            let mean = flat.mean_keepdim(1)?;
            let var = flat.broadcast_sub(&mean)?.sqr()?.mean_keepdim(1)?;
            let (mean, var) = (mean.flatten_all()?, var.flatten_all()?);
            let n = (b * h * w) as f64;
            let unbiased = if n > 1.0 {
                (var.detach() * (n / (n - 1.0)))?
            } else {
                var.detach()
            };
            let m = self.momentum;
            self.running_mean
                .set(&((self.running_mean.as_tensor() * (1.0 - m))? + (mean.detach() * m)?)?)?;
            self.running_var
                .set(&((self.running_var.as_tensor() * (1.0 - m))? + (unbiased * m)?)?)?;
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().detach(),
                self.running_var.as_tensor().detach(),
            )
        };
        let shape = (1, c, 1, 1);
        let scale = (&self.weight / (var + self.eps)?.sqrt()?)?;
        let shift = (&self.bias - (&mean * &scale)?)?;
        Ok(x.broadcast_mul(&scale.reshape(shape)?)?
            .broadcast_add(&shift.reshape(shape)?)?)
    }
}

/// Nearest-neighbour x2 upsampling built from broadcast and reshape.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape((b, c, h, 1, w, 1))?
        .broadcast_as((b, c, h, 2, w, 2))?
        .reshape((b, c, 2 * h, 2 * w))?)
}

/// Picks every `stride`-th element along `dim`, starting at `start`, `count` times.
fn strided(x: &Tensor, dim: usize, start: usize, count: usize, stride: usize) -> Result<Tensor> {
    let n = x.dims()[dim];
    let span = (count * stride).min(n - start);
    let mut t = x.narrow(dim, start, span)?;
    if span < count * stride {
        let mut pad_shape = t.dims().to_vec();
        pad_shape[dim] = count * stride - span;
        t = Tensor::cat(
            &[&t, &Tensor::zeros(pad_shape, t.dtype(), t.device())?],
            dim,
        )?;
    }
    let mut shape = t.dims().to_vec();
    shape[dim] = count;
    shape.insert(dim + 1, stride);
    Ok(t.reshape(shape)?.narrow(dim + 1, 0, 1)?.squeeze(dim + 1)?)
}

/// 3x3 / stride 2 / padding 1 max pooling for non-negative inputs (post-ReLU),
/// where zero padding is equivalent to -inf padding.
pub fn max_pool_3x3_s2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let (oh, ow) = ((h - 1) / 2 + 1, (w - 1) / 2 + 1);
    let padded = x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
    let mut out: Option<Tensor> = None;
    for ky in 0..3 {
        let rows = strided(&padded, 2, ky, oh, 2)?;
        for kx in 0..3 {
            let win = strided(&rows, 3, kx, ow, 2)?;
            out = Some(match out {
                None => win,
                Some(o) => o.maximum(&win)?,
            });
        }
    }
    Ok(out.expect("nine windows"))
}

/// 2x2 / stride 2 max pooling (odd trailing rows and columns are dropped).
/// Built from a reshape and two max reductions because the stock pooling
/// op scales its gradient by the fraction of tied maxima instead of dividing.
pub fn max_pool_2x2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    let x = x.narrow(2, 0, 2 * oh)?.narrow(3, 0, 2 * ow)?;
    Ok(x.reshape((b, c, oh, 2, ow, 2))?.max(5)?.max(3)?)
}

/// 2x2 / stride 2 average pooling.
pub fn avg_pool_2x2(x: &Tensor) -> Result<Tensor> {
    Ok(x.avg_pool2d(2)?)
}

/// Mean over the spatial dims: `[B, C, H, W] -> [B, C]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn upsample_repeats_pixels() {
        let x = Tensor::arange(0f32, 4., &Device::Cpu)
            .unwrap()
            .reshape((1, 1, 2, 2))
            .unwrap();
        let y: Vec<Vec<f32>> = upsample2x(&x)
            .unwrap()
            .squeeze(0)
            .unwrap()
            .squeeze(0)
            .unwrap()
            .to_vec2()
            .unwrap();
        assert_eq!(
            y,
            vec![
                vec![0., 0., 1., 1.],
                vec![0., 0., 1., 1.],
                vec![2., 2., 3., 3.],
                vec![2., 2., 3., 3.]
            ]
        );
    }

    #[test]
    fn max_pool_2x2_forward_and_gradient() {
        let vals = [1f32, 5., 2., 0., 3., 4., 7., 6., 9., 8.];
        let x = candle_core::Var::from_tensor(
            &Tensor::from_slice(&vals, (1, 1, 2, 5), &Device::Cpu).unwrap(),
        )
        .unwrap();
        let y = max_pool_2x2(x.as_tensor()).unwrap();
        assert_eq!(
            y.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            vec![7., 9.]
        );
        let g = y.sum_all().unwrap().backward().unwrap();
        let g: Vec<f32> = g
            .get(x.as_tensor())
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        // Rows [1 5 2 0 3] and [4 7 6 9 8]; the odd last column is dropped.
        assert_eq!(g, vec![0., 0., 0., 0., 0., 0., 1., 0., 1., 0.]);
    }

    #[test]
    fn max_pool_matches_brute_force() {
        let (h, w) = (7, 6);
        let vals: Vec<f32> = (0..h * w).map(|i| ((i * 37) % 23) as f32).collect();
        let x = Tensor::from_vec(vals.clone(), (1, 1, h, w), &Device::Cpu).unwrap();
        let y = max_pool_3x3_s2(&x).unwrap();
        let (oh, ow) = (4, 3);
        assert_eq!(y.dims(), &[1, 1, oh, ow]);
        let got: Vec<f32> = y.flatten_all().unwrap().to_vec1().unwrap();
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = 0f32;
                for dy in 0..3 {
                    for dx in 0..3 {
                        let (iy, ix) = ((2 * oy + dy) as i64 - 1, (2 * ox + dx) as i64 - 1);
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            m = m.max(vals[iy as usize * w + ix as usize]);
                        }
                    }
                }
                assert_eq!(got[oy * ow + ox], m);
            }
        }
    }

    #[test]
    fn instance_norm_standardizes() {
        let store = super::super::ParamStore::new(DType::F64, &Device::Cpu);
        let norm = InstanceNorm::new(2, store.vb()).unwrap();
        store.init_seeded(0).unwrap();
        let x = Tensor::arange(0f64, 32., &Device::Cpu)
            .unwrap()
            .reshape((1, 2, 4, 4))
            .unwrap();
        let y = norm.forward(&x).unwrap();
        let mean: Vec<f64> = y
            .mean((2, 3))
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        assert!(mean.iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn batch_norm_tracks_running_stats_only_in_train() {
        let store = super::super::ParamStore::new(DType::F32, &Device::Cpu);
        let bn = BatchNorm::new(1, store.vb()).unwrap();
        store.init_seeded(0).unwrap();
        let x = (Tensor::ones((2, 1, 2, 2), DType::F32, &Device::Cpu).unwrap() * 3.0).unwrap();
        let before = store.snapshot().unwrap();
        bn.forward_t(&x, false).unwrap();
        assert_eq!(before, store.snapshot().unwrap());
        bn.forward_t(&x, true).unwrap();
        let rm: Vec<f32> = store.get("running_mean").unwrap().to_vec1().unwrap();
        assert!((rm[0] - 0.3).abs() < 1e-6);
    }
}
