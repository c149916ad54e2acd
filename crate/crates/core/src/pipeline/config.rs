//! Experiment configuration: one TOML document covering every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classifier::{ClassifierConfig, ClassifierTrainConfig, GuidanceMode};
use crate::diffusion::{DiffusionTrainConfig, GuidanceSpec, ScheduleConfig, UNetConfig};
use crate::eval::{AblationCell, EvalTask};
use crate::fsutil::sha256_hex;
use crate::heatmap::BankConfig;
use crate::hybridclip::{EncoderConfig, HybridTrainConfig};
use crate::synthdata::DatasetSpec;
use crate::taxonomy::{SUPER_CARDIAC, SUPER_NO_FINDING};
use crate::{Error, Result};

/// Environment variable that may override the output root.
pub const OUT_ENV: &str = "DAUG_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct DiffusionSection {
    pub schedule: ScheduleConfig,
    pub unet: UNetConfig,
    pub train: DiffusionTrainConfig,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct ClassifierSection {
    pub net: ClassifierConfig,
    pub train: ClassifierTrainConfig,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapSection {
    pub bank: BankConfig,
    /// Every guide a bank is generated for.
    pub guides: Vec<GuidanceSpec>,
    /// The guide whose heatmaps feed the third encoder channel.
    pub train_guide: GuidanceSpec,
}

impl Default for HeatmapSection {
    fn default() -> Self {
        let train_guide = GuidanceSpec::new(SUPER_NO_FINDING, 1, GuidanceMode::Softmax, 100.0);
        Self { bank: BankConfig::default(), guides: vec![train_guide.clone()], train_guide }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HybridSection {
    pub encoder: EncoderConfig,
    pub train: HybridTrainConfig,
    /// Train on DAug inputs (image, image, heatmap) rather than monochrome ones.
    pub daug: bool,
}

impl Default for HybridSection {
    fn default() -> Self {
        Self { encoder: EncoderConfig::default(), train: HybridTrainConfig::default(), daug: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub tasks: Vec<EvalTask>,
    pub ablation_grid: Vec<AblationCell>,
    pub ablation_seeds: Vec<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { tasks: EvalTask::defaults(), ablation_grid: AblationCell::grid(), ablation_seeds: vec![0, 1, 2] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FigureSection {
    /// Rows per grid.
    pub samples: usize,
    /// Super-class translated towards in the grid's second column.
    pub target: usize,
    pub scale: f64,
    /// Pixel magnification of each tile.
    pub zoom: u32,
}

impl Default for FigureSection {
    fn default() -> Self {
        Self { samples: 6, target: SUPER_CARDIAC, scale: 100.0, zoom: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed, copied into every stage seed.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub diffusion: DiffusionSection,
    pub classifier: ClassifierSection,
    pub heatmaps: HeatmapSection,
    pub hybrid: HybridSection,
    pub eval: EvalSection,
    pub figures: FigureSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            dataset: DatasetSpec::default(),
            diffusion: DiffusionSection::default(),
            classifier: ClassifierSection::default(),
            heatmaps: HeatmapSection::default(),
            hybrid: HybridSection::default(),
            eval: EvalSection::default(),
            figures: FigureSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        let seed = cfg.seed;
        Ok(cfg.with_seed(seed))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.diffusion.schedule.build()?;
        self.diffusion.unet.validate()?;
        if !self.dataset.image_size.is_multiple_of(self.diffusion.unet.size_multiple()) {
            return Err(Error::Config(format!(
                "image_size {} must be divisible by {}",
                self.dataset.image_size,
                self.diffusion.unet.size_multiple()
            )));
        }
        for g in self.heatmaps.guides.iter().chain([&self.heatmaps.train_guide]) {
            g.validate()?;
        }
        if self.hybrid.daug && !self.heatmaps.guides.contains(&self.heatmaps.train_guide) {
            return Err(Error::Config("heatmaps.train_guide must be one of heatmaps.guides".into()));
        }
        self.hybrid.train.validate()?;
        if self.figures.target >= crate::NUM_SUPER {
            return Err(Error::Config(format!("figure target {} is not a super-class", self.figures.target)));
        }
        Ok(())
    }

    /// Seconds-scale variant of the desk config: tiny dataset and models.
    /// Useful for smoke runs of the whole stage graph, not for results.
    pub fn smoke() -> Self {
        let mut cfg = Self::default();
        cfg.dataset.n_train = 48;
        cfg.dataset.n_val = 16;
        cfg.dataset.n_test = 24;
        cfg.dataset.image_size = 16;
        cfg.diffusion.unet = UNetConfig { base_width: 4, time_dim: 8, ..Default::default() };
        cfg.diffusion.train.epochs = 2;
        cfg.diffusion.train.batch_size = 16;
        cfg.classifier.net = ClassifierConfig { width: 4, time_dim: 8, ..Default::default() };
        cfg.classifier.train.epochs = 2;
        cfg.classifier.train.batch_size = 16;
        cfg.heatmaps.bank.t_start = Some(5);
        cfg.hybrid.encoder = EncoderConfig { image_width: 4, text_hidden: 8, embed_dim: 8, ..Default::default() };
        cfg.hybrid.train.epochs = 2;
        cfg.hybrid.train.batch_size = 16;
        cfg.eval.ablation_seeds = vec![0, 1];
        cfg.figures.samples = 2;
        cfg
    }

    /// Copy the master seed into every stage's own seed field.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.dataset.seed = seed;
        self.diffusion.train.seed = seed;
        self.classifier.train.seed = seed;
        self.heatmaps.bank.seed = seed;
        self.hybrid.train.seed = seed;
        self
    }

    /// The output root after applying the environment override.
    pub fn resolved_out_dir(&self) -> PathBuf {
        std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| self.out_dir.clone())
    }
}

/// SHA-256 of the canonical JSON form (object keys sorted), so key order in
/// the source document never matters.
pub fn canonical_hash<T: Serialize>(value: &T) -> Result<String> {
    let v: Value = serde_json::to_value(value)?;
    Ok(sha256_hex(canonical_json(&v).as_bytes()))
}

fn canonical_json(v: &Value) -> String {
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            let body: Vec<String> =
                keys.iter().map(|k| format!("{}:{}", Value::String((*k).clone()), canonical_json(&m[*k]))).collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(a) => format!("[{}]", a.iter().map(canonical_json).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}
