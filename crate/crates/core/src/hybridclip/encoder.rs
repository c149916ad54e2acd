//! Image and text towers projecting into a shared unit-sphere embedding.

use daug_nn::{Bound, Conv2d, Graph, Linear, ParamId, ParamStore, Real, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::text::{EncodedTexts, Vocabulary};
use crate::{Error, Result};

/// `ln(1 / 0.07)`: CLIP's initial temperature.
pub const INIT_LOGIT_SCALE: f64 = 2.659_260_036_932_778_4;
/// Temperature never drops below 1/100.
pub const MAX_LOGIT_SCALE: f64 = 4.605_170_185_988_092;

pub(crate) const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub image_width: usize,
    pub text_hidden: usize,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { in_channels: 3, image_width: 16, text_hidden: 64, embed_dim: 64 }
    }
}

#[derive(Clone, Debug)]
struct ImageTower {
    convs: Vec<Conv2d>,
    proj: Linear,
}

#[derive(Clone, Debug)]
struct TextTower {
    fc1: Linear,
    fc2: Linear,
    proj: Linear,
}

/// Dual encoder. `version` counts weight updates, so cached text embeddings
/// can tell when they are stale.
#[derive(Clone, Debug)]
pub struct DualEncoder {
    config: EncoderConfig,
    vocab: Vocabulary,
    image: ImageTower,
    text: TextTower,
    logit_scale: ParamId,
    pub params: ParamStore<f32>,
    pub(crate) version: u64,
}

impl DualEncoder {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        if config.image_width == 0 || config.embed_dim == 0 || config.text_hidden == 0 || config.in_channels == 0 {
            return Err(Error::Config(format!("invalid encoder config {config:?}")));
        }
        let vocab = Vocabulary::default();
        let mut s = ParamStore::new();
        let w = config.image_width;
        let plan = [(config.in_channels, w, 1), (w, 2 * w, 2), (2 * w, 2 * w, 1), (2 * w, 4 * w, 2), (4 * w, 4 * w, 1)];
        let convs = plan
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, stride))| Conv2d::new(&mut s, &format!("image.conv{i}"), cin, cout, 3, stride, 1.0, rng))
            .collect();
        let proj = Linear::new(&mut s, "image.proj", 4 * w, config.embed_dim, true, 1.0, rng);
        let h = config.text_hidden;
        let text = TextTower {
            fc1: Linear::new(&mut s, "text.fc1", vocab.len(), h, true, 1.0, rng),
            fc2: Linear::new(&mut s, "text.fc2", h, h, true, 1.0, rng),
            proj: Linear::new(&mut s, "text.proj", h, config.embed_dim, true, 1.0, rng),
        };
        let logit_scale = s.add("logit_scale", Tensor::scalar(INIT_LOGIT_SCALE as f32).reshape(&[1]));
        Ok(Self { config, vocab, image: ImageTower { convs, proj }, text, logit_scale, params: s, version: 0 })
    }

    pub fn from_blob(config: EncoderConfig, blob: &[u8], version: u64) -> Result<Self> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut e = Self::new(config, &mut rng)?;
        e.params.load_safetensors(blob)?;
        e.version = version;
        Ok(e)
    }

    pub fn weights_blob(&self) -> Result<Vec<u8>> {
        Ok(self.params.to_safetensors()?)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Number of weight updates applied so far.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn bump_version(&mut self) {
        self.version += 1;
    }

    pub fn logit_scale_id(&self) -> ParamId {
        self.logit_scale
    }

    /// CLIP temperature `exp(-logit_scale)`.
    pub fn temperature(&self) -> f64 {
        (-(self.params.get(self.logit_scale).data()[0] as f64)).exp()
    }

    pub(crate) fn clamp_logit_scale(&mut self) {
        let v = &mut self.params.get_mut(self.logit_scale).data_mut()[0];
        *v = v.clamp(0.0, MAX_LOGIT_SCALE as f32);
    }

    /// Unit embeddings `[B, d]` of a `[B, C, H, W]` batch.
    pub fn image_graph<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let mut h = x;
        for c in &self.image.convs {
            h = c.forward(g, p, h);
            h = g.silu(h);
        }
        let h = g.global_avg_pool(h);
        let e = self.image.proj.forward(g, p, h);
        g.l2_normalize_rows(e, NORM_EPS)
    }

    /// Unit embeddings `[B, d]`: sentence bags through an MLP, averaged per
    /// text, then projected.
    pub fn text_graph<T: Real>(&self, g: &mut Graph<T>, p: &Bound, texts: &EncodedTexts) -> Var {
        let bags = g.constant(texts.bags.cast());
        let pool = g.constant(texts.pool.cast());
        let h = self.text.fc1.forward(g, p, bags);
        let h = g.silu(h);
        let h = self.text.fc2.forward(g, p, h);
        let h = g.silu(h);
        let pooled = g.matmul(pool, h);
        let e = self.text.proj.forward(g, p, pooled);
        g.l2_normalize_rows(e, NORM_EPS)
    }

    pub fn embed_images(&self, x: &Tensor<f32>) -> Tensor<f32> {
        let mut out = Vec::new();
        let b = x.shape()[0];
        // bounded memory for large galleries
        for start in (0..b).step_by(256) {
            let idx: Vec<usize> = (start..(start + 256).min(b)).collect();
            let mut g = Graph::new();
            let p = self.params.bind_frozen(&mut g);
            let xv = g.constant(x.select_batch(&idx));
            let e = self.image_graph(&mut g, &p, xv);
            out.push(g.value(e).clone());
        }
        if out.is_empty() {
            return Tensor::zeros(&[0, self.config.embed_dim]);
        }
        Tensor::stack(&out)
    }

    pub fn embed_texts(&self, texts: &[&str]) -> Result<Tensor<f32>> {
        if texts.is_empty() {
            return Ok(Tensor::zeros(&[0, self.config.embed_dim]));
        }
        let enc = EncodedTexts::new(&self.vocab, texts)?;
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let e = self.text_graph(&mut g, &p, &enc);
        Ok(g.value(e).clone())
    }

    pub fn embed_image(&self, x: &Tensor<f32>) -> Tensor<f32> {
        let s = x.shape();
        self.embed_images(&x.clone().reshape(&[1, s[0], s[1], s[2]]))
    }

    pub fn embed_text(&self, text: &str) -> Result<Tensor<f32>> {
        self.embed_texts(&[text])
    }
}
