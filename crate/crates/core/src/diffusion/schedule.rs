//! Linear-beta DDPM noise schedule and the closed-form forward process.

use daug_nn::Tensor;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 200, beta_start: 1e-4, beta_end: 0.02 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// Arrays are indexed by step `t` in `1..=T`; `alpha_bar(0)` is 1.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::Config(format!("schedule needs at least 2 steps, got {steps}")));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "need 0 < beta_start <= beta_end < 1, got beta_start={beta_start} beta_end={beta_end}"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule { beta, alpha, alpha_bar })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Reverse-step variance, `sigma_t^2 = beta_t`.
    pub fn variance(&self, t: usize) -> f64 {
        self.beta(t)
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::Argument(format!("step {t} outside 0..={}", self.steps())));
        }
        Ok(())
    }
}

/// Map `[0, 1]` pixels to the model domain `[-1, 1]`.
pub fn to_model_domain(x: &Tensor<f32>) -> Tensor<f32> {
    x.map(|v| 2.0 * v - 1.0)
}

/// Map model-domain values back to `[0, 1]`, clamping.
pub fn from_model_domain(x: &Tensor<f32>) -> Tensor<f32> {
    x.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps` with one step per batch
/// element; tensors are in the model domain.
pub fn forward_sample_batch(x0: &Tensor<f32>, t: &[usize], eps: &Tensor<f32>, s: &NoiseSchedule) -> Result<Tensor<f32>> {
    if x0.shape() != eps.shape() {
        return Err(Error::Argument(format!("x0 {:?} and eps {:?} differ in shape", x0.shape(), eps.shape())));
    }
    let b = x0.shape()[0];
    if t.len() != b {
        return Err(Error::Argument(format!("{} steps for a batch of {b}", t.len())));
    }
    let per = x0.len() / b.max(1);
    let mut out = Vec::with_capacity(x0.len());
    for (i, &ti) in t.iter().enumerate() {
        s.check_step(ti)?;
        let ab = s.alpha_bar(ti);
        let (ca, cb) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
        let xs = &x0.data()[i * per..(i + 1) * per];
        let es = &eps.data()[i * per..(i + 1) * per];
        out.extend(xs.iter().zip(es).map(|(&x, &e)| ca * x + cb * e));
    }
    Ok(Tensor::new(x0.shape(), out))
}

pub fn forward_sample(x0: &Tensor<f32>, t: usize, eps: &Tensor<f32>, s: &NoiseSchedule) -> Result<Tensor<f32>> {
    let b = x0.shape().first().copied().unwrap_or(0);
    forward_sample_batch(x0, &vec![t; b], eps, s)
}
