//! On-disk dataset layout:
//! `images/<id>.png`, `masks/<id>/<class>.png`, `meta/<id>.json`, `manifest.json`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetSpec, Split, SynthDataset, SynthSample};
use crate::fsutil::{read_json, write_json};
use crate::imaging::{Image, Mask};
use crate::taxonomy::{slug, ClassTaxonomy, FINE_CLASSES, NUM_FINE, NUM_SUPER};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub spec: DatasetSpec,
    pub taxonomy: ClassTaxonomy,
    pub splits: BTreeMap<Split, Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    pub split: Split,
    pub labels14: [u8; NUM_FINE],
    pub labels7: [u8; NUM_SUPER],
    pub report: String,
}

pub fn write_dataset(ds: &SynthDataset, dir: &Path) -> Result<()> {
    for sub in ["images", "masks", "meta"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    let mut splits = BTreeMap::new();
    for split in Split::ALL {
        let samples = ds.split(split);
        splits.insert(split, samples.iter().map(|s| s.id.clone()).collect());
        for s in samples {
            s.image.save_png(&dir.join("images").join(format!("{}.png", s.id)))?;
            for (c, m) in s.masks.iter().enumerate() {
                if !m.is_empty() {
                    m.save_png(&dir.join("masks").join(&s.id).join(format!("{}.png", slug(FINE_CLASSES[c]))))?;
                }
            }
            let meta = SampleMeta {
                id: s.id.clone(),
                split,
                labels14: s.labels14,
                labels7: s.labels7(),
                report: s.report.clone(),
            };
            write_json(&dir.join("meta").join(format!("{}.json", s.id)), &meta)?;
        }
    }
    let manifest =
        DatasetManifest { format_version: FORMAT_VERSION, spec: ds.spec.clone(), taxonomy: ClassTaxonomy::default(), splits };
    // written last: its presence marks a complete dataset
    write_json(&dir.join("manifest.json"), &manifest)
}

fn read_sample(dir: &Path, id: &str, split: Split) -> Result<SynthSample> {
    let meta_path = dir.join("meta").join(format!("{id}.json"));
    let meta: SampleMeta = read_json(&meta_path)?;
    if meta.id != id || meta.split != split {
        return Err(Error::format(&meta_path, format!("expected {id} in {}", split.name())));
    }
    let image = Image::load_png(&dir.join("images").join(format!("{id}.png")))?;
    let (h, w) = image.dims();
    let mut masks = Vec::with_capacity(NUM_FINE);
    for name in FINE_CLASSES {
        let p = dir.join("masks").join(id).join(format!("{}.png", slug(name)));
        masks.push(if p.exists() { Mask::load_png(&p)? } else { Mask::empty(h, w) });
    }
    Ok(SynthSample { id: meta.id, image, masks, labels14: meta.labels14, report: meta.report })
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = read_json(&dir.join("manifest.json"))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::format(dir.join("manifest.json"), format!("unsupported format version {}", m.format_version)));
    }
    Ok(m)
}

pub fn read_dataset(dir: &Path) -> Result<SynthDataset> {
    let manifest = read_manifest(dir)?;
    let load = |split: Split| -> Result<Vec<SynthSample>> {
        let ids = manifest.splits.get(&split).map(Vec::as_slice).unwrap_or(&[]);
        ids.iter().map(|id| read_sample(dir, id, split)).collect()
    };
    Ok(SynthDataset { train: load(Split::Train)?, val: load(Split::Val)?, test: load(Split::Test)?, spec: manifest.spec })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::generate_dataset;

    #[test]
    fn write_read_round_trip_is_exact() {
        let spec = DatasetSpec { n_train: 30, n_val: 5, n_test: 8, ..Default::default() };
        let ds = generate_dataset(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        let meta: serde_json::Value = read_json(&dir.path().join("meta/train-00000.json")).unwrap();
        assert_eq!(meta["labels7"].as_array().unwrap().len(), NUM_SUPER);
    }
}
