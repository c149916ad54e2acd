//! Ancestral DDPM sampling, classifier guidance and half-noising translation.

use daug_nn::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{model_batch, GuidanceSpec, NoisePredictor, NoiseSchedule};
use crate::classifier::{Classifier, NoisyLogits};
use crate::imaging::Image;
use crate::{Error, Result};

fn per_sample(x: &Tensor<f32>) -> usize {
    x.len() / x.shape()[0]
}

fn check_batch<R>(x: &Tensor<f32>, rngs: &[R]) -> Result<()> {
    if rngs.len() != x.shape()[0] {
        return Err(Error::Argument(format!("{} rng streams for a batch of {}", rngs.len(), x.shape()[0])));
    }
    Ok(())
}

/// `mu(x_t, t) = (x_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t)`.
pub fn posterior_mean(x_t: &Tensor<f32>, eps: &Tensor<f32>, t: usize, s: &NoiseSchedule) -> Tensor<f32> {
    let c = (s.beta(t) / (1.0 - s.alpha_bar(t)).sqrt()) as f32;
    let inv = (1.0 / s.alpha(t).sqrt()) as f32;
    x_t.zip_map(eps, |x, e| (x - c * e) * inv)
}

fn add_noise<R: Rng>(mean: Tensor<f32>, t: usize, s: &NoiseSchedule, rngs: &mut [R]) -> Tensor<f32> {
    if t == 1 {
        return mean;
    }
    let sigma = s.variance(t).sqrt();
    let per = per_sample(&mean);
    let mut out = mean;
    for (chunk, rng) in out.data_mut().chunks_mut(per).zip(rngs.iter_mut()) {
        for v in chunk {
            let z: f64 = rng.sample(StandardNormal);
            *v += (sigma * z) as f32;
        }
    }
    out
}

/// One reverse step `x_t -> x_{t-1}`; batch element `i` draws its noise from
/// `rngs[i]`. No noise is added at `t = 1`.
pub fn ddpm_step<P: NoisePredictor + ?Sized, R: Rng>(
    model: &P,
    x_t: &Tensor<f32>,
    t: usize,
    s: &NoiseSchedule,
    rngs: &mut [R],
) -> Result<Tensor<f32>> {
    check_batch(x_t, rngs)?;
    if t == 0 || t > s.steps() {
        return Err(Error::Argument(format!("reverse step {t} outside 1..={}", s.steps())));
    }
    let eps = model.predict_noise(x_t, &vec![t; x_t.shape()[0]]);
    Ok(add_noise(posterior_mean(x_t, &eps, t, s), t, s, rngs))
}

/// Mean shift `sign * scale * Sigma_t * grad log p(target | x_t, t)`.
pub fn guidance_shift<M: NoisyLogits>(
    classifier: &Classifier<M>,
    x_t: &Tensor<f32>,
    t: usize,
    guide: &GuidanceSpec,
    s: &NoiseSchedule,
) -> Result<Tensor<f32>> {
    let g = classifier.guidance_grad(x_t, &vec![t; x_t.shape()[0]], guide.target, guide.mode)?;
    let k = (guide.sign as f64 * guide.scale * s.variance(t)) as f32;
    let shift = g.scaled(k);
    if !shift.all_finite() {
        return Err(Error::Guidance { t, target: guide.target });
    }
    Ok(shift)
}

/// [`ddpm_step`] with the posterior mean moved along the classifier gradient.
/// With `scale == 0` the classifier is not consulted and the result equals
/// `ddpm_step` bit for bit.
pub fn guided_step<P: NoisePredictor + ?Sized, M: NoisyLogits, R: Rng>(
    model: &P,
    classifier: Option<&Classifier<M>>,
    x_t: &Tensor<f32>,
    t: usize,
    guide: &GuidanceSpec,
    s: &NoiseSchedule,
    rngs: &mut [R],
) -> Result<Tensor<f32>> {
    check_batch(x_t, rngs)?;
    if t == 0 || t > s.steps() {
        return Err(Error::Argument(format!("reverse step {t} outside 1..={}", s.steps())));
    }
    let eps = model.predict_noise(x_t, &vec![t; x_t.shape()[0]]);
    let mut mean = posterior_mean(x_t, &eps, t, s);
    if guide.scale != 0.0 {
        let c = classifier.ok_or_else(|| Error::Argument("guidance scale > 0 needs a classifier".into()))?;
        mean.add_assign(&guidance_shift(c, x_t, t, guide, s)?);
    }
    Ok(add_noise(mean, t, s, rngs))
}

/// Noise each image to `t_start`, then run guided reverse steps down to 0.
/// Image `i` uses `rngs[i]` for both its forward noise and its sampling
/// noise, so results do not depend on batch composition.
pub fn translate<P: NoisePredictor + ?Sized, M: NoisyLogits, R: Rng>(
    model: &P,
    classifier: Option<&Classifier<M>>,
    images: &[&Image],
    guide: &GuidanceSpec,
    t_start: usize,
    s: &NoiseSchedule,
    rngs: &mut [R],
) -> Result<Vec<Image>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    if rngs.len() != images.len() {
        return Err(Error::Argument(format!("{} rng streams for {} images", rngs.len(), images.len())));
    }
    s.check_step(t_start)?;
    if t_start == 0 {
        return Ok(images.iter().map(|&i| i.clone()).collect());
    }
    let x0 = model_batch(images.iter().copied());
    let per = per_sample(&x0);
    let ab = s.alpha_bar(t_start);
    let (ca, cb) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut data = Vec::with_capacity(x0.len());
    for (chunk, rng) in x0.data().chunks(per).zip(rngs.iter_mut()) {
        for &v in chunk {
            let z: f64 = rng.sample(StandardNormal);
            data.push((ca * v as f64 + cb * z) as f32);
        }
    }
    let mut x = Tensor::new(x0.shape(), data);
    for t in (1..=t_start).rev() {
        x = guided_step(model, classifier, &x, t, guide, s, rngs)?;
    }
    let out = super::from_model_domain(&x);
    Ok((0..images.len()).map(|i| Image::from_tensor(&out, i)).collect())
}
