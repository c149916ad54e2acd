//! Multi-label classifier on noisy images and the guidance gradients it
//! supplies to the sampler.

mod net;
mod train;

use daug_nn::{Bound, Graph, ParamStore, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

pub use net::{ClassifierConfig, ConvClassifier};
pub use train::{train_classifier, ClassifierReport, ClassifierTrainConfig};

use crate::{Error, Result};

/// How logits become class probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceMode {
    /// Independent per-class `sigmoid(z_c)`.
    Sigmoid,
    /// `softmax(z)_c`, competing against every other class.
    Softmax,
}

impl GuidanceMode {
    pub fn name(self) -> &'static str {
        match self {
            GuidanceMode::Sigmoid => "sigmoid",
            GuidanceMode::Softmax => "softmax",
        }
    }
}

impl std::str::FromStr for GuidanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Self::Sigmoid),
            "softmax" => Ok(Self::Softmax),
            _ => Err(Error::Argument(format!("unknown guidance mode `{s}` (sigmoid|softmax)"))),
        }
    }
}

/// A network producing `[B, K]` logits from a noisy batch and its steps.
pub trait NoisyLogits {
    fn num_classes(&self) -> usize;
    fn logits<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, t: &[usize]) -> Var;
}

/// Probabilities of one logit row.
pub fn probs_from_logits(z: &[f64], mode: GuidanceMode) -> Vec<f64> {
    match mode {
        GuidanceMode::Sigmoid => z.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
        GuidanceMode::Softmax => {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        }
    }
}

/// `log p(target)` of one logit row.
pub fn log_prob(z: &[f64], target: usize, mode: GuidanceMode) -> f64 {
    match mode {
        GuidanceMode::Sigmoid => {
            let v = z[target];
            // log sigmoid(v) = -softplus(-v)
            -((-v).max(0.0) + (-v.abs()).exp().ln_1p())
        }
        GuidanceMode::Softmax => {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            z[target] - m - z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
        }
    }
}

/// `d log p(target) / d z` for one logit row.
fn log_prob_seed(z: &[f64], target: usize, mode: GuidanceMode) -> Vec<f64> {
    match mode {
        GuidanceMode::Sigmoid => {
            let mut d = vec![0.0; z.len()];
            d[target] = 1.0 - 1.0 / (1.0 + (-z[target]).exp());
            d
        }
        GuidanceMode::Softmax => {
            let mut d: Vec<f64> = probs_from_logits(z, mode).iter().map(|p| -p).collect();
            d[target] += 1.0;
            d
        }
    }
}

fn check_target<M: NoisyLogits>(net: &M, target: usize) -> Result<()> {
    if target >= net.num_classes() {
        return Err(Error::Argument(format!("target class {target} outside 0..{}", net.num_classes())));
    }
    Ok(())
}

/// Logits of a batch under explicit parameters.
pub fn logits_with<M: NoisyLogits, T: Real>(net: &M, params: &ParamStore<T>, x: &Tensor<T>, t: &[usize]) -> Tensor<T> {
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let xv = g.constant(x.clone());
    let z = net.logits(&mut g, &p, xv, t);
    g.value(z).clone()
}

/// Backpropagate a per-row logit seed to the input.
fn input_grad<M: NoisyLogits, T: Real>(
    net: &M,
    params: &ParamStore<T>,
    x: &Tensor<T>,
    t: &[usize],
    seed: impl Fn(&[f64]) -> Vec<f64>,
) -> Tensor<T> {
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let xv = g.leaf(x.clone());
    let z = net.logits(&mut g, &p, xv, t);
    let zt = g.value(z);
    let (_, k) = zt.dims2();
    let seed_data: Vec<f64> = zt.to_f64_vec().chunks(k).flat_map(&seed).collect();
    let seed = Tensor::from_f64(zt.shape(), &seed_data);
    let mut grads = g.backward_with(z, seed);
    grads.take(xv).unwrap_or_else(|| Tensor::zeros(x.shape()))
}

/// `grad_x log p_mode(target | x_t, t)` for every element of the batch.
pub fn guidance_grad_with<M: NoisyLogits, T: Real>(
    net: &M,
    params: &ParamStore<T>,
    x: &Tensor<T>,
    t: &[usize],
    target: usize,
    mode: GuidanceMode,
) -> Tensor<T> {
    input_grad(net, params, x, t, |z| log_prob_seed(z, target, mode))
}

/// `grad_x z_j` for every element of the batch.
pub fn logit_grad_with<M: NoisyLogits, T: Real>(
    net: &M,
    params: &ParamStore<T>,
    x: &Tensor<T>,
    t: &[usize],
    j: usize,
) -> Tensor<T> {
    input_grad(net, params, x, t, |z| {
        let mut d = vec![0.0; z.len()];
        d[j] = 1.0;
        d
    })
}

/// A network together with its trained weights.
#[derive(Clone, Debug)]
pub struct Classifier<M = ConvClassifier> {
    pub net: M,
    pub params: ParamStore<f32>,
}

/// The default convolutional noisy classifier.
pub type NoisyClassifier = Classifier<ConvClassifier>;

impl<M: NoisyLogits> Classifier<M> {
    pub fn num_classes(&self) -> usize {
        self.net.num_classes()
    }

    /// `[B, K]` logits for a model-domain batch.
    pub fn logits(&self, x_t: &Tensor<f32>, t: &[usize]) -> Tensor<f32> {
        logits_with(&self.net, &self.params, x_t, t)
    }

    /// `[B, K]` probabilities under `mode`.
    pub fn class_probs(&self, x_t: &Tensor<f32>, t: &[usize], mode: GuidanceMode) -> Tensor<f32> {
        let z = self.logits(x_t, t);
        let (_, k) = z.dims2();
        let p: Vec<f64> = z.to_f64_vec().chunks(k).flat_map(|row| probs_from_logits(row, mode)).collect();
        Tensor::from_f64(z.shape(), &p)
    }

    /// `grad_{x_t} log p_mode(target | x_t, t)`, same shape as `x_t`.
    pub fn guidance_grad(&self, x_t: &Tensor<f32>, t: &[usize], target: usize, mode: GuidanceMode) -> Result<Tensor<f32>> {
        check_target(&self.net, target)?;
        let g = guidance_grad_with(&self.net, &self.params, x_t, t, target, mode);
        if !g.all_finite() {
            return Err(Error::Guidance { t: t.first().copied().unwrap_or(0), target });
        }
        Ok(g)
    }
}
