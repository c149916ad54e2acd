//! Deterministic synthetic chest X-ray dataset with pixel-exact lesion masks
//! and templated reports.

mod anatomy;
mod io;
mod report;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use anatomy::{canonical_region, canonical_super_region, Anatomy, CANONICAL_BOXES};
pub use io::{read_dataset, read_manifest, write_dataset, DatasetManifest, SampleMeta, FORMAT_VERSION};
pub use report::{count_negative_mentions, parse_report, render_report, sentences, HEALTHY_SENTENCE};

use crate::imaging::{Image, Mask};
use crate::seeding::rng_for;
use crate::taxonomy::*;
use crate::{Error, Result};

/// Lesion deltas smaller than this are not considered part of the finding.
pub const MASK_THRESHOLD: f64 = 0.04;

/// "If `given` is present, also add `then` with probability `prob`."
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoOccurrence {
    pub given: String,
    pub then: String,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub image_size: usize,
    /// Per fine class, in taxonomy order. The `No Finding` entry is ignored;
    /// that label is derived.
    pub class_prevalence: Vec<f64>,
    pub cooccurrence: Vec<CoOccurrence>,
    pub negative_mention_prob: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        let co = |a: &str, b: &str, p: f64| CoOccurrence { given: a.into(), then: b.into(), prob: p };
        Self {
            n_train: 2000,
            n_val: 300,
            n_test: 500,
            image_size: 32,
            class_prevalence: vec![
                0.0, 0.06, 0.10, 0.08, 0.06, 0.07, 0.07, 0.06, 0.08, 0.05, 0.08, 0.04, 0.04, 0.08,
            ],
            cooccurrence: vec![
                co("Consolidation", "Pleural Effusion", 0.6),
                co("Pneumonia", "Pleural Effusion", 0.5),
                co("Edema", "Pleural Effusion", 0.5),
                co("Pleural Effusion", "Consolidation", 0.3),
                co("Cardiomegaly", "Enlarged Cardiomediastinum", 0.3),
            ],
            negative_mention_prob: 0.3,
            seed: 0,
        }
    }
}

fn check_prob(what: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be a probability in [0, 1], got {p}")))
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 || !self.image_size.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "image_size must be a multiple of 4 and at least 16, got {}",
                self.image_size
            )));
        }
        if self.class_prevalence.len() != NUM_FINE {
            return Err(Error::Config(format!(
                "class_prevalence needs {NUM_FINE} entries, got {}",
                self.class_prevalence.len()
            )));
        }
        for (c, &p) in self.class_prevalence.iter().enumerate() {
            check_prob(&format!("prevalence of {}", FINE_CLASSES[c]), p)?;
        }
        for co in &self.cooccurrence {
            for name in [&co.given, &co.then] {
                match fine_index(name) {
                    Some(c) if c != NO_FINDING => {}
                    _ => return Err(Error::Config(format!("unknown disease class `{name}` in cooccurrence"))),
                }
            }
            check_prob("cooccurrence prob", co.prob)?;
        }
        check_prob("negative_mention_prob", self.negative_mention_prob)
    }

    pub fn split_len(&self, split: Split) -> usize {
        match split {
            Split::Train => self.n_train,
            Split::Val => self.n_val,
            Split::Test => self.n_test,
        }
    }

    /// Draw a label vector; `No Finding` is set iff no disease is drawn.
    pub fn sample_labels<R: Rng + ?Sized>(&self, rng: &mut R) -> [u8; NUM_FINE] {
        let mut l = [0u8; NUM_FINE];
        for c in 1..NUM_FINE {
            l[c] = rng.gen_bool(self.class_prevalence[c]) as u8;
        }
        for co in &self.cooccurrence {
            let (a, b) = (fine_index(&co.given).unwrap_or(0), fine_index(&co.then).unwrap_or(0));
            let draw = rng.gen_bool(co.prob);
            if a != NO_FINDING && b != NO_FINDING && l[a] == 1 && draw {
                l[b] = 1;
            }
        }
        l[NO_FINDING] = (1..NUM_FINE).all(|c| l[c] == 0) as u8;
        l
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub id: String,
    pub image: Image,
    /// One mask per fine class; the `No Finding` mask is always empty.
    pub masks: Vec<Mask>,
    pub labels14: [u8; NUM_FINE],
    pub report: String,
}

impl SynthSample {
    pub fn labels7(&self) -> [u8; NUM_SUPER] {
        to_superclass(&self.labels14)
    }

    /// Union of the masks of the fine members of super-class `s`.
    pub fn super_mask(&self, s: usize) -> Mask {
        let (h, w) = self.image.dims();
        (0..NUM_FINE)
            .filter(|&c| FINE_TO_SUPER[c] == Some(s))
            .fold(Mask::empty(h, w), |m, c| m.union(&self.masks[c]))
    }

    /// Union of all disease masks.
    pub fn disease_mask(&self) -> Mask {
        let (h, w) = self.image.dims();
        self.masks[1..].iter().fold(Mask::empty(h, w), |m, c| m.union(c))
    }
}

/// Render one sample with the requested findings. Findings whose rendering
/// leaves no visible trace are dropped from the labels.
pub fn render_sample<R: Rng + ?Sized>(
    id: impl Into<String>,
    requested: &[u8; NUM_FINE],
    image_size: usize,
    negative_mention_prob: f64,
    rng: &mut R,
) -> SynthSample {
    let n = image_size * image_size;
    let anatomy = Anatomy::sample(rng);
    let mut pixels = anatomy.render(image_size, Default::default());
    let mut labels = [0u8; NUM_FINE];
    let mut masks = vec![Mask::empty(image_size, image_size); NUM_FINE];
    for c in 1..NUM_FINE {
        if requested[c] == 0 {
            continue;
        }
        let delta = anatomy.lesion(c, image_size, rng);
        let mut mask = Mask::empty(image_size, image_size);
        for i in 0..n {
            if delta[i].abs() >= MASK_THRESHOLD {
                mask.set(i / image_size, i % image_size, true);
                pixels[i] += delta[i];
            }
        }
        if !mask.is_empty() {
            labels[c] = 1;
            masks[c] = mask;
        }
    }
    labels[NO_FINDING] = (1..NUM_FINE).all(|c| labels[c] == 0) as u8;
    let data = pixels.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect();
    let image = Image::new(image_size, image_size, data).expect("square image").quantized();
    let report = render_report(&labels, negative_mention_prob, rng);
    SynthSample { id: id.into(), image, masks, labels14: labels, report }
}

pub fn sample_id(split: Split, index: usize) -> String {
    format!("{}-{index:05}", split.name())
}

/// Sample `index` of `split`; independent of every other sample.
pub fn generate_sample(spec: &DatasetSpec, split: Split, index: usize) -> SynthSample {
    let mut rng = rng_for(spec.seed, split.name(), index as u64);
    let labels = spec.sample_labels(&mut rng);
    render_sample(sample_id(split, index), &labels, spec.image_size, spec.negative_mention_prob, &mut rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub spec: DatasetSpec,
    pub train: Vec<SynthSample>,
    pub val: Vec<SynthSample>,
    pub test: Vec<SynthSample>,
}

impl SynthDataset {
    pub fn split(&self, split: Split) -> &[SynthSample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Split, &SynthSample)> {
        Split::ALL.into_iter().flat_map(move |s| self.split(s).iter().map(move |x| (s, x)))
    }
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let gen = |split| (0..spec.split_len(split)).map(|i| generate_sample(spec, split, i)).collect();
    Ok(SynthDataset { spec: spec.clone(), train: gen(Split::Train), val: gen(Split::Val), test: gen(Split::Test) })
}

/// Findings-only probe sample, e.g. for "disease A without B" studies.
pub fn probe_sample(spec: &DatasetSpec, tag: &str, index: usize, findings: &[usize]) -> SynthSample {
    let mut rng = rng_for(spec.seed, tag, index as u64);
    let mut labels = [0u8; NUM_FINE];
    findings.iter().for_each(|&c| labels[c] = 1);
    render_sample(format!("{tag}-{index:05}"), &labels, spec.image_size, spec.negative_mention_prob, &mut rng)
}
