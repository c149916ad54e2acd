//! Denoising diffusion: schedule, U-Net noise predictor, DDPM sampling with
//! classifier guidance, and half-noising image translation.

mod sampler;
mod schedule;
mod train;
mod unet;

use daug_nn::Tensor;
use serde::{Deserialize, Serialize};

pub use sampler::{ddpm_step, guidance_shift, guided_step, posterior_mean, translate};
pub use schedule::{
    forward_sample, forward_sample_batch, from_model_domain, make_schedule, to_model_domain, NoiseSchedule,
    ScheduleConfig,
};
pub use train::{train_denoiser, DiffusionTrainConfig};
pub(crate) use unet::ResBlock;
pub use unet::{NoisePredictor, OracleDenoiser, UNet, UNetConfig};

use crate::classifier::GuidanceMode;
use crate::imaging::{stack_images, Image};
use crate::taxonomy::{slug, NUM_SUPER, SUPER_CLASSES};
use crate::{Error, Result};

/// Stack `[0, 1]` images into a model-domain `[B, 1, H, W]` batch.
pub fn model_batch<'a>(images: impl IntoIterator<Item = &'a Image>) -> Tensor<f32> {
    let v: Vec<&Image> = images.into_iter().collect();
    to_model_domain(&stack_images(&v))
}

/// Direction and strength of classifier guidance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceSpec {
    /// Super-class index (0-based).
    pub target: usize,
    /// +1 moves towards the target, -1 away from it.
    pub sign: i8,
    pub mode: GuidanceMode,
    pub scale: f64,
}

impl GuidanceSpec {
    pub fn new(target: usize, sign: i8, mode: GuidanceMode, scale: f64) -> Self {
        Self { target, sign, mode, scale }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target >= NUM_SUPER {
            return Err(Error::Config(format!("guidance target {} outside 0..{NUM_SUPER}", self.target)));
        }
        if self.sign != 1 && self.sign != -1 {
            return Err(Error::Config(format!("guidance sign must be +1 or -1, got {}", self.sign)));
        }
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("guidance scale must be finite and >= 0, got {}", self.scale)));
        }
        Ok(())
    }

    /// Directory-friendly name, e.g. `plus_no_finding_softmax`.
    pub fn slug(&self) -> String {
        let dir = if self.sign > 0 { "plus" } else { "minus" };
        format!("{dir}_{}_{}", slug(SUPER_CLASSES[self.target]), self.mode.name())
    }
}
