//! Image grids in the style of the translation/heatmap figures: one row per
//! sample with input, translation, sigmoid heatmap, softmax heatmap and mask.

use std::path::Path;

use super::ExperimentConfig;
use crate::classifier::{GuidanceMode, NoisyClassifier};
use crate::diffusion::{translate, GuidanceSpec, NoiseSchedule, UNet};
use crate::fsutil::write_atomic;
use crate::heatmap::make_heatmap;
use crate::imaging::{Image, Mask};
use crate::seeding::rng_for;
use crate::synthdata::{canonical_super_region, SynthDataset, SynthSample};
use crate::taxonomy::NO_FINDING;
use crate::Result;

fn mask_image(m: &Mask) -> Image {
    let (h, w) = m.dims();
    Image::new(h, w, m.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).expect("mask shape")
}

/// Tiles of equal size laid out row by row, magnified by `zoom`, with a
/// one-pixel mid-gray gutter.
pub fn tile_grid(rows: &[Vec<Image>], zoom: usize) -> Result<Image> {
    let zoom = zoom.max(1);
    let (th, tw) = rows.first().and_then(|r| r.first()).map(Image::dims).unwrap_or((0, 0));
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let (ch, cw) = (th * zoom + 1, tw * zoom + 1);
    let (h, w) = (rows.len() * ch + 1, cols * cw + 1);
    let mut data = vec![0.5f32; h * w];
    for (r, row) in rows.iter().enumerate() {
        for (c, tile) in row.iter().enumerate() {
            for y in 0..th * zoom {
                for x in 0..tw * zoom {
                    data[(r * ch + 1 + y) * w + c * cw + 1 + x] = tile.get(y / zoom, x / zoom);
                }
            }
        }
    }
    Image::new(h, w, data)
}

fn grid_rows(
    cfg: &ExperimentConfig,
    samples: &[&SynthSample],
    sign: i8,
    unet: &UNet,
    clf: &NoisyClassifier,
    schedule: &NoiseSchedule,
) -> Result<Vec<Vec<Image>>> {
    let f = &cfg.figures;
    let t_start = cfg.heatmaps.bank.t_start.unwrap_or(schedule.steps() / 2);
    let radius = cfg.heatmaps.bank.smooth_radius;
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    let mut outs = Vec::new();
    for mode in [GuidanceMode::Sigmoid, GuidanceMode::Softmax] {
        let guide = GuidanceSpec::new(f.target, sign, mode, f.scale);
        let mut rngs: Vec<_> = samples.iter().map(|s| rng_for(cfg.seed, &format!("figures/{}/{}", guide.slug(), s.id), 0)).collect();
        outs.push(translate(unet, Some(clf), &images, &guide, t_start, schedule, &mut rngs)?);
    }
    let size = cfg.dataset.image_size;
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mask = if sign < 0 { s.super_mask(f.target) } else { canonical_super_region(f.target, size) };
            Ok(vec![
                s.image.clone(),
                outs[1][i].clone(),
                make_heatmap(&s.image, &outs[0][i], radius)?,
                make_heatmap(&s.image, &outs[1][i], radius)?,
                mask_image(&mask),
            ])
        })
        .collect()
}

/// Two grids from the test split: removing the target class from positives,
/// and adding it to healthy samples. Returns the written file names.
pub(super) fn write_figures(
    cfg: &ExperimentConfig,
    ds: &SynthDataset,
    unet: &UNet,
    clf: &NoisyClassifier,
    schedule: &NoiseSchedule,
    dir: &Path,
) -> Result<Vec<String>> {
    let f = &cfg.figures;
    let positives: Vec<&SynthSample> = ds.test.iter().filter(|s| s.labels7()[f.target] == 1).take(f.samples).collect();
    let healthy: Vec<&SynthSample> = ds.test.iter().filter(|s| s.labels14[NO_FINDING] == 1).take(f.samples).collect();
    let mut written = Vec::new();
    for (name, samples, sign) in [("remove", positives, -1i8), ("add", healthy, 1)] {
        if samples.is_empty() {
            log::warn!("figures: no test samples for the `{name}` grid");
            continue;
        }
        let rows = grid_rows(cfg, &samples, sign, unet, clf, schedule)?;
        let file = format!("{name}_{}.png", GuidanceSpec::new(f.target, sign, GuidanceMode::Softmax, f.scale).slug());
        write_atomic(&dir.join(&file), &tile_grid(&rows, f.zoom as usize)?.png_bytes()?)?;
        written.push(file);
    }
    Ok(written)
}
