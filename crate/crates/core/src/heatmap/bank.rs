//! Pre-generated heatmaps with an on-disk cache:
//! `<dir>/<guide>/<sample_id>.png` plus `<dir>/<guide>/provenance.json`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::make_heatmap;
use crate::classifier::NoisyClassifier;
use crate::diffusion::{translate, GuidanceSpec, NoiseSchedule, UNet};
use crate::fsutil::{read_json, sha256_hex, write_json};
use crate::imaging::Image;
use crate::seeding::rng_for;
use crate::synthdata::SynthSample;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BankConfig {
    /// Noising depth of the translation; `None` means `T / 2`.
    pub t_start: Option<usize>,
    pub smooth_radius: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self { t_start: Some(20), smooth_radius: 1, batch_size: 64, seed: 0 }
    }
}

/// Everything a cached heatmap depends on besides its source image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub guide: GuidanceSpec,
    pub t_start: usize,
    pub smooth_radius: usize,
    pub seed: u64,
    pub diffusion_sha256: String,
    pub classifier_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    image_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CacheIndex {
    provenance: Provenance,
    entries: BTreeMap<String, CacheEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapRecord {
    pub sample_id: String,
    pub heatmap: Image,
    pub provenance: Provenance,
}

/// Heatmaps keyed by guide slug, then sample id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HeatmapBank {
    maps: BTreeMap<String, BTreeMap<String, Image>>,
    provenance: BTreeMap<String, Provenance>,
}

impl HeatmapBank {
    pub fn get(&self, guide: &GuidanceSpec, id: &str) -> Option<&Image> {
        self.maps.get(&guide.slug())?.get(id)
    }

    pub fn record(&self, guide: &GuidanceSpec, id: &str) -> Option<HeatmapRecord> {
        let slug = guide.slug();
        Some(HeatmapRecord {
            sample_id: id.to_string(),
            heatmap: self.maps.get(&slug)?.get(id)?.clone(),
            provenance: self.provenance.get(&slug)?.clone(),
        })
    }

    /// Number of stored heatmaps over all guides.
    pub fn len(&self) -> usize {
        self.maps.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn guides(&self) -> impl Iterator<Item = &Provenance> {
        self.provenance.values()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankStats {
    pub computed: usize,
    pub cache_hits: usize,
}

fn image_hash(img: &Image) -> Result<String> {
    Ok(sha256_hex(&img.png_bytes()?))
}

fn load_index(path: &Path, expected: &Provenance) -> Result<Option<CacheIndex>> {
    if !path.exists() {
        return Ok(None);
    }
    let index: CacheIndex = read_json(path)?;
    if &index.provenance != expected {
        return Err(Error::StaleCache {
            path: path.to_path_buf(),
            detail: format!(
                "cached heatmaps were made with {:?}, current settings are {:?}",
                index.provenance, expected
            ),
        });
    }
    Ok(Some(index))
}

/// One heatmap per (sample, guide). Cached entries whose provenance and
/// source-image hash match are reused; a mismatch is an error, never a
/// silent reuse.
#[allow(clippy::too_many_arguments)]
pub fn generate_bank(
    samples: &[&SynthSample],
    guides: &[GuidanceSpec],
    diffusion: &UNet,
    classifier: &NoisyClassifier,
    schedule: &NoiseSchedule,
    cfg: &BankConfig,
    cache_dir: Option<&Path>,
) -> Result<(HeatmapBank, BankStats)> {
    let mut bank = HeatmapBank::default();
    let mut stats = BankStats::default();
    if guides.is_empty() {
        return Ok((bank, stats));
    }
    let t_start = cfg.t_start.unwrap_or(schedule.steps() / 2);
    let diffusion_sha256 = sha256_hex(&diffusion.weights_blob()?);
    let classifier_sha256 = sha256_hex(&classifier.weights_blob()?);
    for guide in guides {
        guide.validate()?;
        let slug = guide.slug();
        let provenance = Provenance {
            guide: guide.clone(),
            t_start,
            smooth_radius: cfg.smooth_radius,
            seed: cfg.seed,
            diffusion_sha256: diffusion_sha256.clone(),
            classifier_sha256: classifier_sha256.clone(),
        };
        let dir = cache_dir.map(|d| d.join(&slug));
        let index_path = dir.as_ref().map(|d| d.join("provenance.json"));
        let mut index = match &index_path {
            Some(p) => load_index(p, &provenance)?,
            None => None,
        }
        .unwrap_or(CacheIndex { provenance: provenance.clone(), entries: BTreeMap::new() });
        let maps = bank.maps.entry(slug.clone()).or_default();
        let mut todo = Vec::new();
        for &s in samples {
            let hash = image_hash(&s.image)?;
            let cached = match (&dir, index.entries.get(&s.id)) {
                (Some(d), Some(e)) => {
                    if e.image_sha256 != hash {
                        return Err(Error::StaleCache {
                            path: d.join(format!("{}.png", s.id)),
                            detail: "source image changed since the heatmap was cached".into(),
                        });
                    }
                    let p = d.join(format!("{}.png", s.id));
                    p.exists().then(|| Image::load_png(&p)).transpose()?
                }
                _ => None,
            };
            match cached {
                Some(h) => {
                    maps.insert(s.id.clone(), h);
                    stats.cache_hits += 1;
                }
                None => todo.push((s, hash)),
            }
        }
        for chunk in todo.chunks(cfg.batch_size.max(1)) {
            let images: Vec<&Image> = chunk.iter().map(|(s, _)| &s.image).collect();
            let mut rngs: Vec<_> = chunk.iter().map(|(s, _)| rng_for(cfg.seed, &format!("{slug}/{}", s.id), 0)).collect();
            let out = translate(diffusion, Some(classifier), &images, guide, t_start, schedule, &mut rngs)?;
            for ((s, hash), tr) in chunk.iter().zip(&out) {
                let heat = make_heatmap(&s.image, tr, cfg.smooth_radius)?.quantized();
                if let Some(d) = &dir {
                    heat.save_png(&d.join(format!("{}.png", s.id)))?;
                    index.entries.insert(s.id.clone(), CacheEntry { image_sha256: hash.clone() });
                }
                maps.insert(s.id.clone(), heat);
                stats.computed += 1;
            }
            if let Some(p) = &index_path {
                write_json(p, &index)?;
            }
            log::debug!("{slug}: {} heatmaps computed", stats.computed);
        }
        if let Some(p) = &index_path {
            write_json(p, &index)?;
        }
        bank.provenance.insert(slug, provenance);
    }
    log::info!("heatmap bank: {} computed, {} cache hits", stats.computed, stats.cache_hits);
    Ok((bank, stats))
}

/// Read previously generated heatmaps without the models. Every sample must
/// have a cached entry whose source-image hash still matches.
pub fn load_bank(cache_dir: &Path, guides: &[GuidanceSpec], samples: &[&SynthSample]) -> Result<HeatmapBank> {
    let mut bank = HeatmapBank::default();
    for guide in guides {
        let slug = guide.slug();
        let dir = cache_dir.join(&slug);
        let index_path = dir.join("provenance.json");
        if !index_path.exists() {
            return Err(Error::Dependency { stage: format!("heatmaps/{slug}"), command: "gen-heatmaps".into() });
        }
        let index: CacheIndex = read_json(&index_path)?;
        if &index.provenance.guide != guide {
            return Err(Error::StaleCache { path: index_path, detail: format!("cache holds {:?}", index.provenance.guide) });
        }
        let maps = bank.maps.entry(slug.clone()).or_default();
        for &s in samples {
            let entry = index.entries.get(&s.id).ok_or_else(|| Error::Dependency {
                stage: format!("heatmaps/{slug}/{}", s.id),
                command: "gen-heatmaps".into(),
            })?;
            let p = dir.join(format!("{}.png", s.id));
            if entry.image_sha256 != image_hash(&s.image)? {
                return Err(Error::StaleCache { path: p, detail: "source image changed since the heatmap was cached".into() });
            }
            maps.insert(s.id.clone(), Image::load_png(&p)?);
        }
        bank.provenance.insert(slug, index.provenance);
    }
    Ok(bank)
}
