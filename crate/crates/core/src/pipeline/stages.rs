use std::path::Path;

use serde_json::{json, Value};

use super::{figures, ExperimentConfig, Stage};
use crate::classifier::{train_classifier, NoisyClassifier};
use crate::diffusion::{train_denoiser, NoiseSchedule, UNet};
use crate::eval::{evaluate, run_ablation, AblationData, MetricReport};
use crate::fsutil::{read_json, sha256_hex, write_atomic, write_json};
use crate::heatmap::{generate_bank, load_bank, HeatmapBank};
use crate::hybridclip::{class_prompts, train_hybrid, DualEncoder, HeatmapSource, HybridReport};
use crate::imaging::Image;
use crate::synthdata::{generate_dataset, read_dataset, write_dataset, SynthDataset, SynthSample};
use crate::taxonomy::ClassTaxonomy;
use crate::{Error, Result};

const WEIGHTS: &str = "weights.safetensors";

fn read_weights(root: &Path, stage: Stage) -> Result<Vec<u8>> {
    let p = stage.dir(root).join(WEIGHTS);
    if !p.exists() {
        return Err(Error::Dependency { stage: stage.name().into(), command: stage.command().into() });
    }
    Ok(std::fs::read(p)?)
}

pub fn load_dataset(root: &Path) -> Result<SynthDataset> {
    let dir = Stage::Synth.dir(root);
    if !dir.join("manifest.json").exists() {
        return Err(Error::Dependency { stage: "synth".into(), command: "synth".into() });
    }
    read_dataset(&dir)
}

pub fn load_diffusion(cfg: &ExperimentConfig, root: &Path) -> Result<UNet> {
    UNet::from_blob(cfg.diffusion.unet.clone(), &read_weights(root, Stage::Diffusion)?)
}

pub fn load_classifier(cfg: &ExperimentConfig, root: &Path) -> Result<NoisyClassifier> {
    NoisyClassifier::from_blob(cfg.classifier.net.clone(), &read_weights(root, Stage::Classifier)?)
}

pub fn load_encoder(cfg: &ExperimentConfig, root: &Path) -> Result<DualEncoder> {
    let report: HybridReport = read_json(&Stage::Hybrid.dir(root).join("training.json"))?;
    DualEncoder::from_blob(cfg.hybrid.encoder.clone(), &read_weights(root, Stage::Hybrid)?, report.steps)
}

/// Samples that get heatmaps: train and test.
fn bank_samples(ds: &SynthDataset) -> Vec<&SynthSample> {
    ds.train.iter().chain(&ds.test).collect()
}

/// The cached bank for the configured guides.
pub fn stage_bank(cfg: &ExperimentConfig, root: &Path, ds: &SynthDataset) -> Result<HeatmapBank> {
    load_bank(&Stage::Heatmaps.dir(root), &cfg.heatmaps.guides, &bank_samples(ds))
}

fn schedule(cfg: &ExperimentConfig) -> Result<NoiseSchedule> {
    cfg.diffusion.schedule.build()
}

fn save_weights(root: &Path, stage: Stage, blob: &[u8]) -> Result<String> {
    write_atomic(&stage.dir(root).join(WEIGHTS), blob)?;
    Ok(sha256_hex(blob))
}

fn tables_text(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&format!("{:<22} avg {:.4}  wavg {:.4}\n", r.task, r.avg, r.wavg));
        let cells: Vec<String> = r.per_class.iter().map(|v| v.map_or("   -  ".into(), |v| format!("{v:.4}"))).collect();
        out.push_str(&format!("  per class: {}\n", cells.join(" ")));
    }
    out
}

pub(super) fn execute(cfg: &ExperimentConfig, stage: Stage, root: &Path) -> Result<Value> {
    let dir = stage.dir(root);
    match stage {
        Stage::Synth => {
            let ds = generate_dataset(&cfg.dataset)?;
            write_dataset(&ds, &dir)?;
            Ok(json!({ "train": ds.train.len(), "val": ds.val.len(), "test": ds.test.len() }))
        }
        Stage::Diffusion => {
            let ds = load_dataset(root)?;
            let images: Vec<&Image> = ds.train.iter().map(|s| &s.image).collect();
            let (net, curve) =
                train_denoiser(&images, &schedule(cfg)?, cfg.diffusion.unet.clone(), &cfg.diffusion.train)?;
            let sha = save_weights(root, stage, &net.weights_blob()?)?;
            Ok(json!({
                "schedule": cfg.diffusion.schedule,
                "architecture": cfg.diffusion.unet,
                "train": cfg.diffusion.train,
                "loss_curve": curve,
                "weights_sha256": sha,
            }))
        }
        Stage::Classifier => {
            let ds = load_dataset(root)?;
            let s = schedule(cfg)?;
            let (net, report) =
                train_classifier(&ds.train, &ds.val, &s, cfg.classifier.net.clone(), &cfg.classifier.train)?;
            let sha = save_weights(root, stage, &net.weights_blob()?)?;
            write_json(&dir.join("ap.json"), &report)?;
            Ok(json!({
                "taxonomy": ClassTaxonomy::default(),
                "schedule_sha256": super::canonical_hash(&cfg.diffusion.schedule)?,
                "architecture": cfg.classifier.net,
                "train": cfg.classifier.train,
                "report": report,
                "weights_sha256": sha,
            }))
        }
        Stage::Heatmaps => {
            let ds = load_dataset(root)?;
            let unet = load_diffusion(cfg, root)?;
            let clf = load_classifier(cfg, root)?;
            let samples = bank_samples(&ds);
            let (bank, stats) =
                generate_bank(&samples, &cfg.heatmaps.guides, &unet, &clf, &schedule(cfg)?, &cfg.heatmaps.bank, Some(&dir))?;
            log::info!("heatmaps: {} computed, {} cache hits", stats.computed, stats.cache_hits);
            Ok(json!({
                "records": bank.len(),
                "computed": stats.computed,
                "cache_hits": stats.cache_hits,
                "provenance": bank.guides().collect::<Vec<_>>(),
            }))
        }
        Stage::Hybrid => {
            let ds = load_dataset(root)?;
            let train: Vec<&SynthSample> = ds.train.iter().collect();
            let bank = if cfg.hybrid.daug { Some(stage_bank(cfg, root, &ds)?) } else { None };
            let src = bank.as_ref().map(|b| HeatmapSource { bank: b, guide: &cfg.heatmaps.train_guide });
            let (enc, report) = train_hybrid(&train, src, cfg.hybrid.encoder.clone(), &cfg.hybrid.train)?;
            let sha = save_weights(root, stage, &enc.weights_blob()?)?;
            write_json(&dir.join("training.json"), &report)?;
            let provenance = bank.as_ref().and_then(|b| b.record(&cfg.heatmaps.train_guide, &train[0].id)).map(|r| r.provenance);
            Ok(json!({
                "w": cfg.hybrid.train.w,
                "kappa": cfg.hybrid.train.kappa,
                "temperature": report.temperature,
                "prompts": class_prompts(),
                "dataset_sha256": Stage::Synth.hash(cfg)?,
                "heatmap_provenance": provenance,
                "loss_curve": report.loss_curve,
                "weights_sha256": sha,
            }))
        }
        Stage::Eval => {
            let ds = load_dataset(root)?;
            let enc = load_encoder(cfg, root)?;
            let test: Vec<&SynthSample> = ds.test.iter().collect();
            let bank = if cfg.hybrid.daug { Some(stage_bank(cfg, root, &ds)?) } else { None };
            let src = bank.as_ref().map(|b| HeatmapSource { bank: b, guide: &cfg.heatmaps.train_guide });
            let hash = stage.hash(cfg)?;
            let reports: Vec<MetricReport> = evaluate(&enc, &cfg.eval.tasks, &test, src, cfg.hybrid.train.kappa)?
                .into_iter()
                .map(|m| m.with_meta(cfg.seed, hash.clone()))
                .collect();
            write_json(&dir.join("reports.json"), &reports)?;
            write_atomic(&dir.join("tables.txt"), tables_text(&reports).as_bytes())?;
            Ok(json!({ "reports": reports }))
        }
        Stage::Ablate => {
            let ds = load_dataset(root)?;
            let bank = stage_bank(cfg, root, &ds)?;
            let train: Vec<&SynthSample> = ds.train.iter().collect();
            let test: Vec<&SynthSample> = ds.test.iter().collect();
            let data = AblationData {
                train: &train,
                test: &test,
                heatmaps: Some(HeatmapSource { bank: &bank, guide: &cfg.heatmaps.train_guide }),
            };
            let mut table = run_ablation(
                &cfg.eval.ablation_grid,
                &cfg.eval.ablation_seeds,
                data,
                &cfg.hybrid.encoder,
                &cfg.hybrid.train,
                &cfg.eval.tasks,
            )?;
            let hash = stage.hash(cfg)?;
            for row in &mut table.rows {
                row.reports.iter_mut().for_each(|m| m.config_hash = Some(hash.clone()));
            }
            write_json(&dir.join("table.json"), &table)?;
            write_atomic(&dir.join("table.txt"), table.render().as_bytes())?;
            let summary: Vec<Value> = table
                .cells()
                .iter()
                .flat_map(|&c| {
                    let table = &table;
                    table.tasks().into_iter().map(move |t| json!({ "cell": c.name(), "task": t, "wavg": table.summary(c, &t) }))
                })
                .collect();
            Ok(json!({ "runs": table.rows.len(), "summary": summary }))
        }
        Stage::Figures => {
            let ds = load_dataset(root)?;
            let unet = load_diffusion(cfg, root)?;
            let clf = load_classifier(cfg, root)?;
            let written = figures::write_figures(cfg, &ds, &unet, &clf, &schedule(cfg)?, &dir)?;
            Ok(json!({ "files": written }))
        }
    }
}
