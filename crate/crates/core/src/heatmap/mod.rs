//! Abnormality heatmaps from (original, translated) pairs, a content-checked
//! on-disk bank, and 3-channel DAug inputs.

mod bank;

use daug_nn::Tensor;

pub use bank::{generate_bank, load_bank, BankConfig, BankStats, HeatmapBank, HeatmapRecord, Provenance};

use crate::imaging::Image;
use crate::{Error, Result};

/// `|original - translated|`, box-blurred, then min-max normalised per image.
/// A zero difference stays all zero.
pub fn make_heatmap(original: &Image, translated: &Image, smooth_radius: usize) -> Result<Image> {
    if original.dims() != translated.dims() {
        return Err(Error::Argument(format!("image {:?} vs translation {:?}", original.dims(), translated.dims())));
    }
    let (h, w) = original.dims();
    let diff: Vec<f32> = original.data().iter().zip(translated.data()).map(|(a, b)| (a - b).abs()).collect();
    let diff = Image::new(h, w, diff)?.box_blur(smooth_radius);
    let lo = diff.data().iter().cloned().fold(f32::INFINITY, f32::min);
    let hi = diff.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    if hi - lo <= 0.0 {
        return Ok(Image::zeros(h, w));
    }
    Image::new(h, w, diff.data().iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// `[3, H, W]` input: the image twice, then the heatmap.
pub fn augment_channels(image: &Image, heatmap: &Image) -> Result<Tensor<f32>> {
    if image.dims() != heatmap.dims() {
        return Err(Error::Argument(format!("image {:?} vs heatmap {:?}", image.dims(), heatmap.dims())));
    }
    let (h, w) = image.dims();
    let mut data = Vec::with_capacity(3 * h * w);
    data.extend_from_slice(image.data());
    data.extend_from_slice(image.data());
    data.extend_from_slice(heatmap.data());
    Ok(Tensor::new(&[3, h, w], data))
}

/// Monochrome baseline input: the heatmap channel is all zero.
pub fn monochrome_channels(image: &Image) -> Tensor<f32> {
    let (h, w) = image.dims();
    augment_channels(image, &Image::zeros(h, w)).expect("same shape")
}

/// Inverse of [`augment_channels`].
pub fn split_channels(x: &Tensor<f32>) -> Result<[Image; 3]> {
    let &[c, h, w] = x.shape() else {
        return Err(Error::Argument(format!("expected [3, H, W], got {:?}", x.shape())));
    };
    if c != 3 {
        return Err(Error::Argument(format!("expected 3 channels, got {c}")));
    }
    let plane = |i: usize| Image::new(h, w, x.data()[i * h * w..(i + 1) * h * w].to_vec());
    Ok([plane(0)?, plane(1)?, plane(2)?])
}
