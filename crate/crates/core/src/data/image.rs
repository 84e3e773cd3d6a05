use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{ImageBuffer, Rgb, RgbImage};
use ndarray::{s, Array3, ArrayView3};

use crate::error::{GfdError, Result};

/// Maps an 8-bit intensity to `[-1, 1]`.
#[inline]
pub fn encode_pixel(p: u8) -> f32 {
    p as f32 / 127.5 - 1.0
}

/// Maps a `[-1, 1]` value back to 8 bits, clamping out-of-range values.
#[inline]
pub fn decode_pixel(x: f32) -> u8 {
    ((x + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// A normalized RGB image laid out as `[3, height, width]` with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pixels: Array3<f32>,
}

impl ImageTensor {
    pub fn new(pixels: Array3<f32>) -> Result<Self> {
        if pixels.shape()[0] != 3 {
            return Err(GfdError::ShapeMismatch {
                expected: vec![3, 0, 0],
                got: pixels.shape().to_vec(),
            });
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(GfdError::Config("image contains non-finite values".into()));
        }
        Ok(Self { pixels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            pixels: Array3::zeros((3, height, width)),
        }
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let pixels = Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
            encode_pixel(img.get_pixel(x as u32, y as u32)[c])
        });
        Self { pixels }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let (h, w) = (self.height(), self.width());
        ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            Rgb([
                decode_pixel(self.pixels[[0, y, x]]),
                decode_pixel(self.pixels[[1, y, x]]),
                decode_pixel(self.pixels[[2, y, x]]),
            ])
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(GfdError::MissingFile(path.to_path_buf()));
        }
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path)?;
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn shape(&self) -> [usize; 3] {
        [3, self.height(), self.width()]
    }

    pub fn pixels(&self) -> &Array3<f32> {
        &self.pixels
    }

    pub fn view(&self) -> ArrayView3<'_, f32> {
        self.pixels.view()
    }

    pub fn into_pixels(self) -> Array3<f32> {
        self.pixels
    }

    /// Crops a `size`x`size` window with its top-left corner at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, size: usize) -> Result<Self> {
        if top + size > self.height() || left + size > self.width() {
            return Err(GfdError::ImageTooSmall {
                size: self.height().min(self.width()),
                crop: size,
            });
        }
        Ok(Self {
            pixels: self
                .pixels
                .slice(s![.., top..top + size, left..left + size])
                .to_owned(),
        })
    }

    /// Bilinear resize to `height`x`width`.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Self {
        self.resize_with(height, width, image::imageops::FilterType::Triangle)
    }

    pub fn resize_nearest(&self, height: usize, width: usize) -> Self {
        self.resize_with(height, width, image::imageops::FilterType::Nearest)
    }

    fn resize_with(
        &self,
        height: usize,
        width: usize,
        filter: image::imageops::FilterType,
    ) -> Self {
        if height == self.height() && width == self.width() {
            return self.clone();
        }
        let (h, w) = (self.height(), self.width());
        let src: ImageBuffer<Rgb<f32>, Vec<f32>> =
            ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                let (x, y) = (x as usize, y as usize);
                Rgb([
                    self.pixels[[0, y, x]],
                    self.pixels[[1, y, x]],
                    self.pixels[[2, y, x]],
                ])
            });
        let dst = image::imageops::resize(&src, width as u32, height as u32, filter);
        let pixels = Array3::from_shape_fn((3, height, width), |(c, y, x)| {
            dst.get_pixel(x as u32, y as u32)[c]
        });
        Self { pixels }
    }

    /// Converts to a `[1, 3, H, W]` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let data: Vec<f32> = self.pixels.iter().copied().collect();
        let t = Tensor::from_vec(data, (1, 3, self.height(), self.width()), device)?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Stacks same-sized images into a `[B, 3, H, W]` tensor.
    pub fn stack(images: &[&ImageTensor], dtype: DType, device: &Device) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| GfdError::Config("empty batch".into()))?;
        let shape = first.shape();
        let mut data = Vec::with_capacity(images.len() * shape.iter().product::<usize>());
        for img in images {
            if img.shape() != shape {
                return Err(GfdError::ShapeMismatch {
                    expected: shape.to_vec(),
                    got: img.shape().to_vec(),
                });
            }
            data.extend(img.pixels.iter().copied());
        }
        let t = Tensor::from_vec(data, (images.len(), shape[0], shape[1], shape[2]), device)?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Splits a `[B, 3, H, W]` tensor into images.
    pub fn unstack(t: &Tensor) -> Result<Vec<ImageTensor>> {
        let (b, c, h, w) = t.dims4()?;
        let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        let per = c * h * w;
        (0..b)
            .map(|i| {
                let pixels =
                    Array3::from_shape_vec((c, h, w), flat[i * per..(i + 1) * per].to_vec())
                        .map_err(|e| GfdError::Config(e.to_string()))?;
                Ok(ImageTensor { pixels })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_round_trip_is_lossless() {
        for p in 0..=255u8 {
            let x = encode_pixel(p);
            assert!((-1.0..=1.0).contains(&x));
            assert_eq!(decode_pixel(x), p);
        }
    }

    #[test]
    fn rgb8_round_trip() {
        let img = RgbImage::from_fn(5, 3, |x, y| Rgb([(x * 40) as u8, (y * 80) as u8, 255]));
        let t = ImageTensor::from_rgb8(&img);
        assert_eq!(t.shape(), [3, 3, 5]);
        assert_eq!(t.to_rgb8(), img);
    }

    #[test]
    fn tensor_stack_round_trip() {
        let a = ImageTensor::new(Array3::from_shape_fn((3, 4, 4), |(c, y, x)| {
            (c + y + x) as f32 / 10.0
        }))
        .unwrap();
        let b = ImageTensor::zeros(4, 4);
        let t = ImageTensor::stack(&[&a, &b], DType::F32, &Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[2, 3, 4, 4]);
        let back = ImageTensor::unstack(&t).unwrap();
        assert_eq!(back[0], a);
        assert_eq!(back[1], b);
    }

    #[test]
    fn rejects_non_finite() {
        let mut px = Array3::zeros((3, 2, 2));
        px[[0, 0, 0]] = f32::NAN;
        assert!(ImageTensor::new(px).is_err());
    }
}
