//! Minibatch training of the dual encoder under the hybrid loss.

use daug_nn::{clip_grad_norm, cosine_lr, Adam, Graph, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::encoder::{DualEncoder, EncoderConfig};
use super::loss::{hybrid_loss_graph, I2C_LOGIT_SCALE};
use super::text::{class_prompts, EncodedTexts};
use crate::diffusion::GuidanceSpec;
use crate::heatmap::{augment_channels, monochrome_channels, HeatmapBank};
use crate::seeding::rng_for;
use crate::synthdata::SynthSample;
use crate::{Error, Result, NUM_FINE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HybridTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Weight of the CLIP term; `1 - w` goes to the image-to-class term.
    pub w: f64,
    pub kappa: f64,
    pub seed: u64,
}

impl Default for HybridTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            lr: 2e-3,
            weight_decay: 1e-4,
            grad_clip: 1.0,
            w: 0.7,
            kappa: I2C_LOGIT_SCALE,
            seed: 0,
        }
    }
}

impl HybridTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.w) {
            return Err(Error::Config(format!("w must lie in [0, 1], got {}", self.w)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("contrastive training needs batch_size >= 2".into()));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::Config(format!("kappa must be positive, got {}", self.kappa)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridReport {
    pub loss_curve: Vec<f64>,
    pub temperature: f64,
    pub steps: u64,
}

/// Heatmaps feeding the third input channel.
#[derive(Clone, Copy, Debug)]
pub struct HeatmapSource<'a> {
    pub bank: &'a HeatmapBank,
    pub guide: &'a GuidanceSpec,
}

/// `[B, 3, H, W]` encoder inputs: DAug channels when a heatmap source is
/// given, the monochrome baseline otherwise.
pub fn encoder_inputs(samples: &[&SynthSample], heatmaps: Option<HeatmapSource<'_>>) -> Result<Tensor<f32>> {
    if samples.is_empty() {
        return Err(Error::Argument("no samples to encode".into()));
    }
    let parts = samples
        .iter()
        .map(|s| {
            let x = match heatmaps {
                Some(src) => {
                    let h = src.bank.get(src.guide, &s.id).ok_or_else(|| {
                        Error::Argument(format!("no `{}` heatmap for sample {}", src.guide.slug(), s.id))
                    })?;
                    augment_channels(&s.image, h)?
                }
                None => monochrome_channels(&s.image),
            };
            let shape = x.shape().to_vec();
            Ok(x.reshape(&[1, shape[0], shape[1], shape[2]]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::stack(&parts))
}

fn label_rows(samples: &[&SynthSample]) -> Tensor<f32> {
    let data = samples.iter().flat_map(|s| s.labels14.map(|v| v as f32)).collect();
    Tensor::new(&[samples.len(), NUM_FINE], data)
}

pub fn train_hybrid(
    samples: &[&SynthSample],
    heatmaps: Option<HeatmapSource<'_>>,
    arch: EncoderConfig,
    cfg: &HybridTrainConfig,
) -> Result<(DualEncoder, HybridReport)> {
    cfg.validate()?;
    if samples.len() < 2 {
        return Err(Error::Argument("hybrid training needs at least two samples".into()));
    }
    let mut rng = rng_for(cfg.seed, "hybrid", 0);
    let mut enc = DualEncoder::new(arch, &mut rng)?;
    let inputs = encoder_inputs(samples, heatmaps)?;
    let labels = label_rows(samples);
    let vocab = enc.vocab().clone();
    let reports: Vec<Vec<Vec<f32>>> = samples.iter().map(|s| vocab.encode(&s.report)).collect::<Result<_>>()?;
    let prompt_texts = class_prompts();
    let prompts = EncodedTexts::new(&vocab, &prompt_texts.iter().map(String::as_str).collect::<Vec<_>>())?;

    let n = samples.len();
    let mut opt = Adam::new(&enc.params).with_weight_decay(cfg.weight_decay);
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            // a singleton batch has no negatives
            if chunk.len() < 2 {
                continue;
            }
            let x = inputs.select_batch(chunk);
            let texts = EncodedTexts::from_sentences(vocab.len(), &chunk.iter().map(|&i| &reports[i]).collect::<Vec<_>>());
            let y = labels.select_batch(chunk);
            let mut g = Graph::new();
            let p = enc.params.bind(&mut g);
            let xv = g.constant(x);
            let img = enc.image_graph(&mut g, &p, xv);
            let txt = enc.text_graph(&mut g, &p, &texts);
            // prompts go through the current text weights at every step
            let cls = enc.text_graph(&mut g, &p, &prompts);
            let scale = p.var(enc.logit_scale_id());
            let loss = hybrid_loss_graph(&mut g, img, txt, cls, &y, scale, cfg.w, cfg.kappa);
            let lv = g.value(loss).data()[0] as f64;
            if !lv.is_finite() {
                return Err(Error::Training { stage: "hybrid", detail: format!("loss {lv} at epoch {epoch}, step {step}") });
            }
            let mut grads = g.backward(loss);
            let mut gs = enc.params.collect_grads(&mut grads, &p);
            clip_grad_norm(&mut gs, cfg.grad_clip);
            opt.step(&mut enc.params, &gs, cosine_lr(cfg.lr, step, total, steps_per_epoch.min(total / 10), 0.05));
            enc.clamp_logit_scale();
            enc.bump_version();
            step += 1;
            sum += lv * chunk.len() as f64;
            seen += chunk.len();
        }
        curve.push(sum / seen.max(1) as f64);
        log::debug!("hybrid epoch {epoch}: loss {:.4}", curve[epoch]);
    }
    let report = HybridReport { loss_curve: curve, temperature: enc.temperature(), steps: enc.version() };
    Ok((enc, report))
}
