//! Convolutional encoder with time conditioning, producing super-class logits.

use daug_nn::{sinusoidal_embedding, Bound, Conv2d, Graph, Linear, ParamStore, Real, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Classifier, NoisyLogits};
use crate::diffusion::ResBlock;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub in_channels: usize,
    pub width: usize,
    pub time_dim: usize,
    pub num_classes: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { in_channels: 1, width: 16, time_dim: 32, num_classes: crate::NUM_SUPER }
    }
}

#[derive(Clone, Debug)]
pub struct ConvClassifier {
    config: ClassifierConfig,
    time: Linear,
    stem: Conv2d,
    blocks: Vec<ResBlock>,
    downs: Vec<Conv2d>,
    head: Linear,
}

impl ConvClassifier {
    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }
}

impl NoisyLogits for ConvClassifier {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn logits<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, t: &[usize]) -> Var {
        let emb = g.constant(sinusoidal_embedding(t, self.config.time_dim));
        let e = self.time.forward(g, p, emb);
        let temb = g.silu(e);
        let mut h = self.stem.forward(g, p, x);
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(g, p, h, temb);
            if let Some(d) = self.downs.get(i) {
                let a = g.silu(h);
                h = d.forward(g, p, a);
            }
        }
        let h = g.silu(h);
        let h = g.global_avg_pool(h);
        self.head.forward(g, p, h)
    }
}

impl Classifier<ConvClassifier> {
    pub fn new<R: Rng + ?Sized>(config: ClassifierConfig, rng: &mut R) -> Result<Self> {
        if config.width == 0 || config.num_classes == 0 || config.time_dim == 0 || !config.time_dim.is_multiple_of(2) {
            return Err(Error::Config(format!("invalid classifier config {config:?}")));
        }
        let mut s = ParamStore::new();
        let (w, td) = (config.width, config.time_dim);
        let temb = 2 * td;
        let time = Linear::new(&mut s, "time.fc", td, temb, true, 1.0, rng);
        let stem = Conv2d::new(&mut s, "stem", config.in_channels, w, 3, 1, 1.0, rng);
        let chans = [w, 2 * w, 4 * w];
        let mut blocks = Vec::new();
        let mut downs = Vec::new();
        for (i, &c) in chans.iter().enumerate() {
            blocks.push(ResBlock::new(&mut s, &format!("block{i}"), c, c, temb, rng));
            if let Some(&next) = chans.get(i + 1) {
                downs.push(Conv2d::new(&mut s, &format!("down{i}"), c, next, 3, 2, 1.0, rng));
            }
        }
        let head = Linear::new(&mut s, "head", chans[2], config.num_classes, true, 1.0, rng);
        Ok(Self { net: ConvClassifier { config, time, stem, blocks, downs, head }, params: s })
    }

    pub fn from_blob(config: ClassifierConfig, blob: &[u8]) -> Result<Self> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut c = Self::new(config, &mut rng)?;
        c.params.load_safetensors(blob)?;
        Ok(c)
    }

    pub fn weights_blob(&self) -> Result<Vec<u8>> {
        Ok(self.params.to_safetensors()?)
    }
}
