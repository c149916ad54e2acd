//! Multi-label BCE training of the noisy classifier.

use daug_nn::{clip_grad_norm, cosine_lr, Adam, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ClassifierConfig, NoisyClassifier, NoisyLogits};
use crate::diffusion::{forward_sample_batch, model_batch, NoiseSchedule};
use crate::eval::average_precision;
use crate::seeding::rng_for;
use crate::synthdata::SynthSample;
use crate::{Error, Result, NUM_SUPER};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Upper bound on the per-class positive weight `n_neg / n_pos`.
    pub max_pos_weight: f64,
    /// Noise step of the fixed-slice validation AP; `None` means `T / 4`.
    pub eval_t: Option<usize>,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            lr: 2e-3,
            weight_decay: 1e-4,
            grad_clip: 1.0,
            max_pos_weight: 10.0,
            eval_t: None,
            seed: 0,
        }
    }
}

/// Validation AP per super-class; `None` where a class has no positives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub loss_curve: Vec<f64>,
    pub eval_t: usize,
    pub ap_fixed_t: Vec<Option<f64>>,
    pub ap_random_t: Vec<Option<f64>>,
}

fn labels7(samples: &[&SynthSample]) -> Tensor<f32> {
    let data: Vec<f32> = samples.iter().flat_map(|s| s.labels7().map(|v| v as f32)).collect();
    Tensor::new(&[samples.len(), NUM_SUPER], data)
}

fn positive_counts(samples: &[SynthSample]) -> [usize; NUM_SUPER] {
    let mut n = [0; NUM_SUPER];
    for s in samples {
        for (c, &l) in s.labels7().iter().enumerate() {
            n[c] += l as usize;
        }
    }
    n
}

pub fn train_classifier(
    train: &[SynthSample],
    val: &[SynthSample],
    schedule: &NoiseSchedule,
    arch: ClassifierConfig,
    cfg: &ClassifierTrainConfig,
) -> Result<(NoisyClassifier, ClassifierReport)> {
    if train.is_empty() {
        return Err(Error::Argument("classifier training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = rng_for(cfg.seed, "classifier", 0);
    let mut model = NoisyClassifier::new(arch, &mut rng)?;
    let n = train.len();
    let pos = positive_counts(train);
    let pos_weight: Vec<f32> = pos
        .iter()
        .map(|&p| if p == 0 { 1.0 } else { ((n - p) as f64 / p as f64).clamp(1.0, cfg.max_pos_weight) as f32 })
        .collect();
    let mut opt = Adam::new(&model.params).with_weight_decay(cfg.weight_decay);
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let big_t = schedule.steps();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&SynthSample> = chunk.iter().map(|&i| &train[i]).collect();
            let x0 = model_batch(batch.iter().map(|s| &s.image));
            let t: Vec<usize> = (0..batch.len()).map(|_| rng.gen_range(1..=big_t)).collect();
            let eps = Tensor::randn(x0.shape(), 1.0, &mut rng);
            let xt = forward_sample_batch(&x0, &t, &eps, schedule)?;
            let mut g = Graph::new();
            let p = model.params.bind(&mut g);
            let xv = g.constant(xt);
            let z = model.net.logits(&mut g, &p, xv, &t);
            let loss = g.bce_with_logits(z, labels7(&batch), Some(pos_weight.clone()));
            let lv = g.value(loss).data()[0] as f64;
            if !lv.is_finite() {
                return Err(Error::Training {
                    stage: "classifier",
                    detail: format!("loss {lv} at epoch {epoch}, batch {b}"),
                });
            }
            let mut grads = g.backward(loss);
            let mut gs = model.params.collect_grads(&mut grads, &p);
            clip_grad_norm(&mut gs, cfg.grad_clip);
            let step = epoch * steps_per_epoch + b;
            opt.step(&mut model.params, &gs, cosine_lr(cfg.lr, step, total, steps_per_epoch.min(total / 10), 0.05));
            sum += lv * batch.len() as f64;
        }
        curve.push(sum / n as f64);
        log::debug!("classifier epoch {epoch}: loss {:.4}", sum / n as f64);
    }
    let eval_t = cfg.eval_t.unwrap_or(big_t / 4).clamp(1, big_t);
    let train_pos = pos;
    let absent = |c: usize| train_pos[c] == 0;
    let mut eval_rng = rng_for(cfg.seed, "classifier-eval", 0);
    let fixed = evaluate_ap(&model, val, schedule, |_| eval_t, &mut eval_rng)?;
    let random = evaluate_ap(&model, val, schedule, |r| r.gen_range(1..=big_t), &mut eval_rng)?;
    let mask = |v: Vec<Option<f64>>| v.into_iter().enumerate().map(|(c, a)| if absent(c) { None } else { a }).collect();
    let report = ClassifierReport { loss_curve: curve, eval_t, ap_fixed_t: mask(fixed), ap_random_t: mask(random) };
    Ok((model, report))
}

/// Per-class AP of the classifier on noised copies of `samples`.
pub fn evaluate_ap<R: Rng>(
    model: &NoisyClassifier,
    samples: &[SynthSample],
    schedule: &NoiseSchedule,
    mut step: impl FnMut(&mut R) -> usize,
    rng: &mut R,
) -> Result<Vec<Option<f64>>> {
    let mut scores = vec![Vec::with_capacity(samples.len()); NUM_SUPER];
    for chunk in samples.chunks(256) {
        let x0 = model_batch(chunk.iter().map(|s| &s.image));
        let t: Vec<usize> = (0..chunk.len()).map(|_| step(rng)).collect();
        let eps = Tensor::randn(x0.shape(), 1.0, rng);
        let xt = forward_sample_batch(&x0, &t, &eps, schedule)?;
        let z = model.logits(&xt, &t);
        for row in z.data().chunks(NUM_SUPER) {
            for (c, &v) in row.iter().enumerate() {
                scores[c].push(v as f64);
            }
        }
    }
    Ok((0..NUM_SUPER)
        .map(|c| {
            let labels: Vec<bool> = samples.iter().map(|s| s.labels7()[c] == 1).collect();
            average_precision(&scores[c], &labels)
        })
        .collect())
}
