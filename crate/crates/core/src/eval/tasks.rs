//! Classification and retrieval evaluation of a trained dual encoder, and
//! the augmentation x criterion ablation grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use daug_nn::Tensor;
use serde::{Deserialize, Serialize};

use super::metrics::{auc_roc, map_at_k, MetricReport};
use crate::hybridclip::{
    build_linear_head, cosine_scores, encoder_inputs, rank_by_score, train_hybrid, ClassPromptSet, DualEncoder, EncoderConfig,
    HeatmapSource, HybridReport, HybridTrainConfig,
};
use crate::synthdata::SynthSample;
use crate::{Error, Result, NUM_FINE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum EvalTask {
    /// Per-class AUC of the prompt head on the test split.
    Classification,
    /// Test reports query test images.
    ReportToImage { k: usize },
    /// First half of the test images queries the second half.
    ImageToImage { k: usize },
}

impl EvalTask {
    pub fn name(&self) -> String {
        match self {
            Self::Classification => "classification_auc".into(),
            Self::ReportToImage { k } => format!("r2x_map@{k}"),
            Self::ImageToImage { k } => format!("x2x_map@{k}"),
        }
    }

    pub fn defaults() -> Vec<Self> {
        vec![Self::Classification, Self::ReportToImage { k: 5 }, Self::ImageToImage { k: 5 }]
    }
}

fn labels(samples: &[&SynthSample]) -> Vec<[u8; NUM_FINE]> {
    samples.iter().map(|s| s.labels14).collect()
}

fn ids<'a>(samples: &[&'a SynthSample]) -> Vec<&'a str> {
    samples.iter().map(|s| s.id.as_str()).collect()
}

/// Prompt-head probabilities `[N][14]` for `samples`.
pub fn class_scores(
    encoder: &DualEncoder,
    samples: &[&SynthSample],
    heatmaps: Option<HeatmapSource<'_>>,
    kappa: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut prompts = ClassPromptSet::default();
    prompts.refresh(encoder)?;
    let head = build_linear_head(&prompts, encoder, kappa)?;
    let emb = encoder.embed_images(&encoder_inputs(samples, heatmaps)?);
    Ok(head.classify(&emb))
}

pub fn evaluate_classification(
    encoder: &DualEncoder,
    samples: &[&SynthSample],
    heatmaps: Option<HeatmapSource<'_>>,
    kappa: f64,
) -> Result<MetricReport> {
    let scores = class_scores(encoder, samples, heatmaps, kappa)?;
    let y = labels(samples);
    let mut per_class = Vec::with_capacity(NUM_FINE);
    let mut counts = Vec::with_capacity(NUM_FINE);
    for c in 0..NUM_FINE {
        let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        let l: Vec<bool> = y.iter().map(|r| r[c] == 1).collect();
        counts.push(l.iter().filter(|&&b| b).count());
        per_class.push(match auc_roc(&s, &l) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        });
    }
    MetricReport::new(EvalTask::Classification.name(), per_class, counts)
}

/// Rank every gallery item for every query embedding (rows of `[Q, d]`).
fn rank_all(queries: &Tensor<f32>, gallery: &Tensor<f32>, gallery_ids: &[&str]) -> Vec<Vec<usize>> {
    let d = gallery.shape()[1];
    let n = gallery.shape()[0];
    queries
        .data()
        .chunks(d)
        .map(|q| rank_by_score(&cosine_scores(q, gallery), gallery_ids, n))
        .collect()
}

pub fn evaluate_retrieval(
    encoder: &DualEncoder,
    task: EvalTask,
    samples: &[&SynthSample],
    heatmaps: Option<HeatmapSource<'_>>,
) -> Result<MetricReport> {
    let (queries, query_samples, gallery, k) = match task {
        EvalTask::ReportToImage { k } => {
            let texts: Vec<&str> = samples.iter().map(|s| s.report.as_str()).collect();
            (encoder.embed_texts(&texts)?, samples, samples, k)
        }
        EvalTask::ImageToImage { k } => {
            let (q, g) = samples.split_at(samples.len() / 2);
            (encoder.embed_images(&encoder_inputs(q, heatmaps)?), q, g, k)
        }
        EvalTask::Classification => return Err(Error::Argument("classification is not a retrieval task".into())),
    };
    if gallery.len() < k || query_samples.is_empty() {
        return Err(Error::Argument(format!("{} needs queries and a gallery of at least {k}", task.name())));
    }
    let g = encoder.embed_images(&encoder_inputs(gallery, heatmaps)?);
    let ranked = rank_all(&queries, &g, &ids(gallery));
    map_at_k(&task.name(), &ranked, &labels(query_samples), &labels(gallery), k)
}

pub fn evaluate(
    encoder: &DualEncoder,
    tasks: &[EvalTask],
    samples: &[&SynthSample],
    heatmaps: Option<HeatmapSource<'_>>,
    kappa: f64,
) -> Result<Vec<MetricReport>> {
    tasks
        .iter()
        .map(|&t| match t {
            EvalTask::Classification => evaluate_classification(encoder, samples, heatmaps, kappa),
            _ => evaluate_retrieval(encoder, t, samples, heatmaps),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Augmentation {
    None,
    Daug,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Clip,
    Hybrid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AblationCell {
    pub augmentation: Augmentation,
    pub criterion: Criterion,
}

impl AblationCell {
    pub fn new(augmentation: Augmentation, criterion: Criterion) -> Self {
        Self { augmentation, criterion }
    }

    /// The full 2x2 grid.
    pub fn grid() -> Vec<Self> {
        let mut v = Vec::new();
        for a in [Augmentation::None, Augmentation::Daug] {
            for c in [Criterion::Clip, Criterion::Hybrid] {
                v.push(Self::new(a, c));
            }
        }
        v
    }

    pub fn name(&self) -> String {
        let a = match self.augmentation {
            Augmentation::None => "mono",
            Augmentation::Daug => "daug",
        };
        let c = match self.criterion {
            Criterion::Clip => "clip",
            Criterion::Hybrid => "hybrid",
        };
        format!("{a}+{c}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub seed: u64,
    pub training: HybridReport,
    pub reports: Vec<MetricReport>,
}

/// Mean and range of a task's wAvg over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// wAvg over seeds for one cell and task name.
    pub fn summary(&self, cell: AblationCell, task: &str) -> Option<SeedSummary> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.cell == cell)
            .flat_map(|r| r.reports.iter().filter(|m| m.task == task).map(|m| m.wavg))
            .collect();
        if v.is_empty() {
            return None;
        }
        Some(SeedSummary {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().cloned().fold(f64::INFINITY, f64::min),
            max: v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
    }

    pub fn tasks(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for m in self.rows.iter().flat_map(|r| &r.reports) {
            if !seen.contains(&m.task) {
                seen.push(m.task.clone());
            }
        }
        seen
    }

    pub fn cells(&self) -> Vec<AblationCell> {
        let mut c: Vec<AblationCell> = self.rows.iter().map(|r| r.cell).collect();
        c.sort();
        c.dedup();
        c
    }

    /// Aligned text table: one row per cell, `mean [min, max]` of wAvg per task.
    pub fn render(&self) -> String {
        let tasks = self.tasks();
        let mut out = format!("{:<12}", "cell");
        for t in &tasks {
            let _ = write!(out, " {t:>24}");
        }
        out.push('\n');
        for cell in self.cells() {
            let _ = write!(out, "{:<12}", cell.name());
            for t in &tasks {
                let s = self.summary(cell, t).expect("task present");
                let _ = write!(out, " {:>24}", format!("{:.4} [{:.4}, {:.4}]", s.mean, s.min, s.max));
            }
            out.push('\n');
        }
        out
    }

    /// Per-class values of one task, averaged over seeds, keyed by cell name.
    pub fn per_class_means(&self, task: &str) -> BTreeMap<String, Vec<Option<f64>>> {
        let mut out = BTreeMap::new();
        for cell in self.cells() {
            let reps: Vec<&MetricReport> =
                self.rows.iter().filter(|r| r.cell == cell).flat_map(|r| r.reports.iter().filter(|m| m.task == task)).collect();
            if reps.is_empty() {
                continue;
            }
            let nc = reps[0].per_class.len();
            let means = (0..nc)
                .map(|c| {
                    let v: Vec<f64> = reps.iter().filter_map(|m| m.per_class[c]).collect();
                    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect();
            out.insert(cell.name(), means);
        }
        out
    }
}

/// Everything an ablation run trains on and is evaluated against.
#[derive(Clone, Copy, Debug)]
pub struct AblationData<'a> {
    pub train: &'a [&'a SynthSample],
    pub test: &'a [&'a SynthSample],
    pub heatmaps: Option<HeatmapSource<'a>>,
}

/// Train one encoder per (cell, seed) and evaluate every task on the test samples.
pub fn run_ablation(
    grid: &[AblationCell],
    seeds: &[u64],
    data: AblationData<'_>,
    arch: &EncoderConfig,
    base: &HybridTrainConfig,
    tasks: &[EvalTask],
) -> Result<AblationTable> {
    if grid.iter().any(|c| c.augmentation == Augmentation::Daug) && data.heatmaps.is_none() {
        return Err(Error::Dependency { stage: "heatmap bank".into(), command: "gen-heatmaps".into() });
    }
    let mut table = AblationTable::default();
    for &cell in grid {
        for &seed in seeds {
            let cfg = HybridTrainConfig {
                w: match cell.criterion {
                    Criterion::Clip => 1.0,
                    Criterion::Hybrid => base.w,
                },
                seed,
                ..base.clone()
            };
            let hm = match cell.augmentation {
                Augmentation::Daug => data.heatmaps,
                Augmentation::None => None,
            };
            let (enc, training) = train_hybrid(data.train, hm, arch.clone(), &cfg)?;
            let mut reports = evaluate(&enc, tasks, data.test, hm, cfg.kappa)?;
            reports.iter_mut().for_each(|m| m.seed = Some(seed));
            log::info!("ablation {} seed {seed} done", cell.name());
            table.rows.push(AblationRow { cell, seed, training, reports });
        }
    }
    Ok(table)
}
