//! `H x W x C` floating-point images in `[0, 1]` and 8-bit RGB file I/O.

use std::path::Path;

use image::imageops::FilterType;
use image::{DynamicImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Interleaved `height x width x channels` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape("image elements", height * width * channels, data.len()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self {
            height,
            width,
            channels: 3,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self {
            height,
            width,
            channels: 3,
            data,
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.channels)
    }

    pub fn require_rgb(&self) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::shape("image channels", 3, self.channels));
        }
        Ok(())
    }

    /// Mean absolute difference over pixels and channels.
    pub fn mean_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.data.len() != other.data.len() {
            return Err(Error::shape("image elements", self.data.len(), other.data.len()));
        }
        if self.data.is_empty() {
            return Ok(0.0);
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    /// Converts to a one-item `[1, c, h, w]` tensor mapped to `[-1, 1]`.
    pub fn to_network<T: Scalar>(&self) -> Tensor<T> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut out = vec![T::zero(); h * w * c];
        for (i, px) in self.data.chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                out[ch * h * w + i] = T::from_f64(v as f64 * 2.0 - 1.0);
            }
        }
        Tensor::from_vec([1, c, h, w], out).expect("sizes agree")
    }

    /// Inverse of [`ImageTensor::to_network`] for item `index`, clamped to `[0, 1]`.
    pub fn from_network<T: Scalar>(t: &Tensor<T>, index: usize) -> Self {
        let [_, c, h, w] = t.shape();
        let item = t.item(index);
        let mut data = vec![0.0f32; h * w * c];
        for ch in 0..c {
            for i in 0..h * w {
                let v = (item[ch * h * w + i].as_f64() + 1.0) * 0.5;
                data[i * c + ch] = v.clamp(0.0, 1.0) as f32;
            }
        }
        Self {
            height: h,
            width: w,
            channels: c,
            data,
        }
    }

    pub fn to_rgb8(&self) -> Result<RgbImage> {
        self.require_rgb()?;
        let bytes = self.data.iter().map(|&v| quantize(v)).collect();
        Ok(RgbImage::from_raw(self.width as u32, self.height as u32, bytes).expect("buffer sized from dims"))
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        Self {
            height: img.height() as usize,
            width: img.width() as usize,
            channels: 3,
            data: img.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }
}

/// 8-bit quantization with round-half-up.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

/// Loads an image as RGB in `[0, 1]`. Grayscale inputs are replicated to
/// three channels. With `resize_to`, the largest centered square is cropped
/// and resampled to `side x side`.
pub fn load_image(path: &Path, resize_to: Option<usize>) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let img = match resize_to {
        Some(side) => center_crop_resize(img, side as u32),
        None => img,
    };
    Ok(ImageTensor::from_rgb8(&img.to_rgb8()))
}

fn center_crop_resize(img: DynamicImage, side: u32) -> DynamicImage {
    let (w, h) = (img.width(), img.height());
    let s = w.min(h);
    let cropped = img.crop_imm((w - s) / 2, (h - s) / 2, s, s);
    if s == side {
        cropped
    } else {
        cropped.resize_exact(side, side, FilterType::Triangle)
    }
}

pub fn save_image(img: &ImageTensor, path: &Path) -> Result<()> {
    img.to_rgb8()?.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}
