//! Noise-prediction training of the U-Net.

use daug_nn::{clip_grad_norm, cosine_lr, Adam, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{forward_sample_batch, model_batch, NoiseSchedule, UNet, UNetConfig};
use crate::imaging::Image;
use crate::seeding::rng_for;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub grad_clip: f64,
    /// Decay of the weight average returned as the final model; 0 disables it.
    pub ema_decay: f64,
    pub seed: u64,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 64, lr: 2e-3, grad_clip: 1.0, ema_decay: 0.995, seed: 0 }
    }
}

/// Minimise `|eps - eps_hat(x_t, t)|^2` with `t ~ U{1..T}`. Returns the
/// (averaged) model and the per-epoch mean loss.
pub fn train_denoiser(
    images: &[&Image],
    schedule: &NoiseSchedule,
    arch: UNetConfig,
    cfg: &DiffusionTrainConfig,
) -> Result<(UNet, Vec<f64>)> {
    if images.is_empty() {
        return Err(Error::Argument("denoiser training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = rng_for(cfg.seed, "diffusion", 0);
    let mut model = UNet::new(arch, &mut rng)?;
    let mut ema = model.params.clone();
    let mut opt = Adam::new(&model.params);
    let n = images.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let x0 = model_batch(chunk.iter().map(|&i| images[i]));
            let t: Vec<usize> = (0..chunk.len()).map(|_| rng.gen_range(1..=schedule.steps())).collect();
            let eps = Tensor::randn(x0.shape(), 1.0, &mut rng);
            let xt = forward_sample_batch(&x0, &t, &eps, schedule)?;
            let mut g = Graph::new();
            let p = model.params.bind(&mut g);
            let xv = g.constant(xt);
            let target = g.constant(eps);
            let pred = model.forward(&mut g, &p, xv, &t);
            let d = g.sub(pred, target);
            let sq = g.mul(d, d);
            let loss = g.mean_all(sq);
            let lv = g.value(loss).data()[0] as f64;
            if !lv.is_finite() {
                return Err(Error::Training {
                    stage: "diffusion",
                    detail: format!("loss {lv} at epoch {epoch}, batch {b} (lr {:.2e})", cfg.lr),
                });
            }
            let mut grads = g.backward(loss);
            let mut gs = model.params.collect_grads(&mut grads, &p);
            clip_grad_norm(&mut gs, cfg.grad_clip);
            let step = epoch * steps_per_epoch + b;
            opt.step(&mut model.params, &gs, cosine_lr(cfg.lr, step, total, steps_per_epoch.min(total / 10), 0.05));
            if cfg.ema_decay > 0.0 {
                // short runs would otherwise keep mostly initial weights
                let warm = (1.0 + step as f64) / (10.0 + step as f64);
                ema.ema_update(&model.params, cfg.ema_decay.min(warm));
            }
            sum += lv * chunk.len() as f64;
        }
        curve.push(sum / n as f64);
        log::debug!("diffusion epoch {epoch}: loss {:.5}", sum / n as f64);
    }
    if cfg.ema_decay > 0.0 && cfg.epochs > 0 {
        model.params = ema;
    }
    if !model.params.all_finite() {
        return Err(Error::Training { stage: "diffusion", detail: "non-finite weights after training".into() });
    }
    Ok((model, curve))
}
