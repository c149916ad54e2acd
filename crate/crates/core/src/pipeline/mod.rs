//! Staged experiment pipeline: synth -> diffusion -> classifier -> heatmaps
//! -> hybrid -> eval, plus the ablation grid and figure grids.
//!
//! Every stage writes into its own directory under the output root and ends
//! with a stage manifest holding the stage hash, which covers the config
//! sections the stage reads and the hashes of its upstream stages.

mod config;
mod figures;
mod stages;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use config::{
    canonical_hash, ClassifierSection, DiffusionSection, EvalSection, ExperimentConfig, FigureSection, HeatmapSection,
    HybridSection, OUT_ENV,
};
pub use figures::tile_grid;

use crate::fsutil::{read_json, write_json};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Synth,
    Diffusion,
    Classifier,
    Heatmaps,
    Hybrid,
    Eval,
    Ablate,
    Figures,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Synth,
        Stage::Diffusion,
        Stage::Classifier,
        Stage::Heatmaps,
        Stage::Hybrid,
        Stage::Eval,
        Stage::Ablate,
        Stage::Figures,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Diffusion => "diffusion",
            Stage::Classifier => "classifier",
            Stage::Heatmaps => "heatmaps",
            Stage::Hybrid => "hybrid",
            Stage::Eval => "eval",
            Stage::Ablate => "ablation",
            Stage::Figures => "figures",
        }
    }

    /// CLI subcommand that produces this stage.
    pub fn command(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Diffusion => "train-diffusion",
            Stage::Classifier => "train-classifier",
            Stage::Heatmaps => "gen-heatmaps",
            Stage::Hybrid => "train-hybrid",
            Stage::Eval => "eval",
            Stage::Ablate => "ablate",
            Stage::Figures => "figures",
        }
    }

    /// Directory under the output root.
    pub fn dir(self, root: &Path) -> PathBuf {
        root.join(match self {
            Stage::Synth => "data",
            other => other.name(),
        })
    }

    pub fn upstream(self, cfg: &ExperimentConfig) -> Vec<Stage> {
        match self {
            Stage::Synth => vec![],
            Stage::Diffusion | Stage::Classifier => vec![Stage::Synth],
            Stage::Heatmaps | Stage::Figures => vec![Stage::Synth, Stage::Diffusion, Stage::Classifier],
            Stage::Hybrid if cfg.hybrid.daug => vec![Stage::Synth, Stage::Heatmaps],
            Stage::Hybrid => vec![Stage::Synth],
            Stage::Eval => {
                let mut v = Stage::Hybrid.upstream(cfg);
                v.push(Stage::Hybrid);
                v
            }
            Stage::Ablate => vec![Stage::Synth, Stage::Heatmaps],
        }
    }

    /// Hash of everything this stage's output depends on.
    pub fn hash(self, cfg: &ExperimentConfig) -> Result<String> {
        let section = match self {
            Stage::Synth => json!({ "dataset": cfg.dataset }),
            Stage::Diffusion => json!({ "diffusion": cfg.diffusion }),
            Stage::Classifier => json!({ "classifier": cfg.classifier, "schedule": cfg.diffusion.schedule }),
            Stage::Heatmaps => json!({ "heatmaps": cfg.heatmaps, "schedule": cfg.diffusion.schedule }),
            Stage::Hybrid => json!({ "hybrid": cfg.hybrid, "guide": cfg.heatmaps.train_guide }),
            Stage::Eval => json!({ "tasks": cfg.eval.tasks }),
            Stage::Ablate => json!({
                "hybrid": cfg.hybrid,
                "guide": cfg.heatmaps.train_guide,
                "eval": cfg.eval,
            }),
            Stage::Figures => json!({ "figures": cfg.figures, "heatmaps": cfg.heatmaps, "schedule": cfg.diffusion.schedule }),
        };
        let upstream: BTreeMap<&str, String> =
            self.upstream(cfg).into_iter().map(|s| Ok((s.name(), s.hash(cfg)?))).collect::<Result<_>>()?;
        canonical_hash(&json!({ "stage": self.name(), "config": section, "upstream": upstream }))
    }
}

/// Written last into every stage directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: Stage,
    pub config_hash: String,
    pub seed: u64,
    pub upstream: BTreeMap<String, String>,
    /// Stage-specific record: losses, architecture, metric tables.
    pub details: Value,
}

/// `manifest.json`, except in the dataset directory where that name holds
/// the dataset's own manifest.
pub fn manifest_path(root: &Path, stage: Stage) -> PathBuf {
    stage.dir(root).join(match stage {
        Stage::Synth => "stage.json",
        _ => "manifest.json",
    })
}

pub fn read_stage_manifest(root: &Path, stage: Stage) -> Result<Option<StageManifest>> {
    let p = manifest_path(root, stage);
    if !p.exists() {
        return Ok(None);
    }
    read_json(&p).map(Some)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    UpToDate,
}

/// Machine-readable outcome of one command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub status: RunStatus,
    pub config_hash: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Wall-clock time of this invocation.
    #[serde(default)]
    pub elapsed_secs: f64,
    pub details: Value,
}

/// Options shared by every command.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Replace an artifact built from a different config.
    pub force: bool,
}

fn check_upstream(cfg: &ExperimentConfig, root: &Path, stage: Stage) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for up in stage.upstream(cfg) {
        let expected = up.hash(cfg)?;
        match read_stage_manifest(root, up)? {
            None => return Err(Error::Dependency { stage: up.name().into(), command: up.command().into() }),
            Some(m) if m.config_hash != expected => {
                return Err(Error::Dependency {
                    stage: format!("{} (existing artifact was built from a different config)", up.name()),
                    command: format!("{} --force", up.command()),
                })
            }
            Some(_) => {
                out.insert(up.name().to_string(), expected);
            }
        }
    }
    Ok(out)
}

/// Run one stage. Upstream stages must already exist and match the config;
/// a stage whose manifest already matches is left alone. The heatmap stage
/// still runs, and reports up to date when everything was a cache hit.
pub fn run_stage(cfg: &ExperimentConfig, stage: Stage, opts: RunOptions) -> Result<RunSummary> {
    let start = std::time::Instant::now();
    cfg.validate()?;
    let root = cfg.resolved_out_dir();
    let upstream = check_upstream(cfg, &root, stage)?;
    let hash = stage.hash(cfg)?;
    let dir = stage.dir(&root);
    let summary = |status, details| RunSummary {
        command: stage.command().into(),
        status,
        config_hash: hash.clone(),
        seed: cfg.seed,
        out_dir: dir.clone(),
        elapsed_secs: start.elapsed().as_secs_f64(),
        details,
    };
    let existing = read_stage_manifest(&root, stage)?;
    match &existing {
        Some(m) if m.config_hash == hash && stage != Stage::Heatmaps && !opts.force => {
            log::info!("{}: up to date ({})", stage.name(), &hash[..12]);
            return Ok(summary(RunStatus::UpToDate, m.details.clone()));
        }
        Some(m) if m.config_hash != hash => {
            if !opts.force {
                return Err(Error::Conflict {
                    path: manifest_path(&root, stage),
                    detail: format!("built from config {}, current config is {}", &m.config_hash[..12], &hash[..12]),
                });
            }
            std::fs::remove_dir_all(&dir)?;
        }
        Some(_) if opts.force => std::fs::remove_dir_all(&dir)?,
        _ => {}
    }
    if existing.is_none() && dir.exists() {
        // leftovers of an interrupted run
        if !opts.force && std::fs::read_dir(&dir)?.next().is_some() && stage != Stage::Heatmaps {
            return Err(Error::Conflict {
                path: dir.clone(),
                detail: "directory has content but no manifest (interrupted run?)".into(),
            });
        }
    }
    std::fs::create_dir_all(&dir)?;
    log::info!("{}: running", stage.name());
    let details = stages::execute(cfg, stage, &root)?;
    if stage == Stage::Heatmaps && details["computed"] == 0 && existing.as_ref().is_some_and(|m| m.config_hash == hash) {
        return Ok(summary(RunStatus::UpToDate, details));
    }
    let manifest = StageManifest { stage, config_hash: hash.clone(), seed: cfg.seed, upstream, details: details.clone() };
    write_json(&manifest_path(&root, stage), &manifest)?;
    let s = summary(RunStatus::Completed, details);
    log::info!("{}: done in {:.1}s", stage.name(), s.elapsed_secs);
    write_json(&root.join("runs").join(format!("{}.json", stage.command())), &s)?;
    Ok(s)
}

/// Every stage in order.
pub fn run_all(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Vec<RunSummary>> {
    Stage::ALL.iter().map(|&s| run_stage(cfg, s, opts)).collect()
}

pub use stages::{load_classifier, load_dataset, load_diffusion, load_encoder, stage_bank};
