//! Single-channel float images, binary masks and their PNG encoding.

use std::path::Path;

use daug_nn::Tensor;

use crate::{Error, Result};

/// Grayscale image, row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Argument(format!(
                "image {height}x{width} needs {} pixels, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Snap every pixel to the nearest 8-bit level, so the in-memory image
    /// equals what a PNG round trip produces.
    pub fn quantized(&self) -> Self {
        let data = self.data.iter().map(|&v| u8_to_unit(unit_to_u8(v))).collect();
        Self { data, ..*self }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| unit_to_u8(v)).collect()
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| u8_to_unit(b)).collect())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        crate::fsutil::write_atomic(path, &self.png_bytes()?)
    }

    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        crate::fsutil::encode_png_gray(self.width, self.height, self.to_u8())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.into_luma8();
        let (w, h) = img.dimensions();
        Self::from_u8(h as usize, w as usize, img.as_raw())
    }

    pub fn mean_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims(), other.dims(), "image shapes differ");
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs() as f64).sum();
        s / self.data.len() as f64
    }

    /// Mean over a `(2r+1)^2` window, clipped at the borders.
    pub fn box_blur(&self, radius: usize) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let (h, w) = self.dims();
        let r = radius as isize;
        let mut out = vec![0.0f32; h * w];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let (mut acc, mut n) = (0.0f64, 0usize);
                for yy in (y - r).max(0)..=(y + r).min(h as isize - 1) {
                    for xx in (x - r).max(0)..=(x + r).min(w as isize - 1) {
                        acc += self.data[yy as usize * w + xx as usize] as f64;
                        n += 1;
                    }
                }
                out[y as usize * w + x as usize] = (acc / n as f64) as f32;
            }
        }
        Self { height: h, width: w, data: out }
    }

    /// Row-major index of the largest pixel; ties go to the first one.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// `[1, 1, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(&[1, 1, self.height, self.width], self.data.clone())
    }

    /// Image `i` of a `[B, 1, H, W]` tensor.
    pub fn from_tensor(t: &Tensor<f32>, i: usize) -> Self {
        let (_, c, h, w) = t.dims4();
        assert_eq!(c, 1, "expected a single-channel tensor");
        Self { height: h, width: w, data: t.data()[i * h * w..(i + 1) * h * w].to_vec() }
    }
}

pub fn unit_to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn u8_to_unit(b: u8) -> f32 {
    b as f32 / 255.0
}

/// Stack images into a `[B, 1, H, W]` tensor.
pub fn stack_images(images: &[&Image]) -> Tensor<f32> {
    assert!(!images.is_empty(), "cannot stack zero images");
    let (h, w) = images[0].dims();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for im in images {
        assert_eq!(im.dims(), (h, w), "images differ in size");
        data.extend_from_slice(im.data());
    }
    Tensor::new(&[images.len(), 1, h, w], data)
}

/// Binary mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self { height, width, data }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn area_fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    pub fn union(&self, other: &Self) -> Self {
        assert_eq!(self.dims(), other.dims(), "mask shapes differ");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect();
        Self { data, ..*self }
    }

    /// Chebyshev dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Self {
        let (h, w) = self.dims();
        let r = radius as isize;
        Self::from_fn(h, w, |y, x| {
            let (y, x) = (y as isize, x as isize);
            ((y - r).max(0)..=(y + r).min(h as isize - 1))
                .any(|yy| ((x - r).max(0)..=(x + r).min(w as isize - 1)).any(|xx| self.get(yy as usize, xx as usize)))
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        crate::fsutil::write_atomic(path, &crate::fsutil::encode_png_gray(self.width, self.height, bytes)?)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.into_luma8();
        let (w, h) = img.dimensions();
        Ok(Self { height: h as usize, width: w as usize, data: img.as_raw().iter().map(|&b| b >= 128).collect() })
    }
}
