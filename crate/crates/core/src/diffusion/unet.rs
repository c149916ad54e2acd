//! Small U-Net noise predictor with sinusoidal time conditioning.

use daug_nn::{sinusoidal_embedding, Bound, Conv2d, Graph, Linear, ParamStore, Real, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub base_width: usize,
    /// Channel multiplier per resolution level, finest first.
    pub channel_mults: Vec<usize>,
    pub time_dim: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { in_channels: 1, base_width: 16, channel_mults: vec![1, 2, 2], time_dim: 32 }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.channel_mults.is_empty() || self.channel_mults.contains(&0) {
            return Err(Error::Config("U-Net needs a positive base width and channel multipliers".into()));
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::Config(format!("time_dim must be even and positive, got {}", self.time_dim)));
        }
        Ok(())
    }

    /// Spatial size must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.channel_mults.len() - 1)
    }
}

/// Two 3x3 convolutions with a time-dependent channel bias in between.
#[derive(Clone, Debug)]
pub(crate) struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    time: Linear,
    skip: Option<Conv2d>,
}

impl ResBlock {
    pub(crate) fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<f32>,
        name: &str,
        cin: usize,
        cout: usize,
        temb: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), cin, cout, 3, 1, 1.0, rng),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), cout, cout, 3, 1, 0.5, rng),
            time: Linear::new(store, &format!("{name}.time"), temb, cout, true, 1.0, rng),
            skip: (cin != cout).then(|| Conv2d::new(store, &format!("{name}.skip"), cin, cout, 1, 1, 1.0, rng)),
        }
    }

    pub(crate) fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, temb: Var) -> Var {
        let h = g.silu(x);
        let h = self.conv1.forward(g, p, h);
        let tb = self.time.forward(g, p, temb);
        let h = g.add_channel(h, tb);
        let h = g.silu(h);
        let h = self.conv2.forward(g, p, h);
        let s = match &self.skip {
            Some(c) => c.forward(g, p, x),
            None => x,
        };
        g.add(s, h)
    }
}

#[derive(Clone, Debug)]
struct Layout {
    time1: Linear,
    time2: Linear,
    stem: Conv2d,
    down: Vec<ResBlock>,
    mid: ResBlock,
    up: Vec<ResBlock>,
    out: Conv2d,
}

/// Noise predictor `eps(x_t, t)`; the output has the shape of `x_t`.
#[derive(Clone, Debug)]
pub struct UNet {
    config: UNetConfig,
    layout: Layout,
    pub params: ParamStore<f32>,
}

impl UNet {
    pub fn new<R: Rng + ?Sized>(config: UNetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut s = ParamStore::new();
        let td = config.time_dim;
        let temb = 2 * td;
        let chans: Vec<usize> = config.channel_mults.iter().map(|m| m * config.base_width).collect();
        let time1 = Linear::new(&mut s, "time.fc1", td, temb, true, 1.0, rng);
        let time2 = Linear::new(&mut s, "time.fc2", temb, temb, true, 1.0, rng);
        let stem = Conv2d::new(&mut s, "stem", config.in_channels, chans[0], 3, 1, 1.0, rng);
        let mut down = Vec::new();
        let mut prev = chans[0];
        for (i, &c) in chans.iter().enumerate() {
            down.push(ResBlock::new(&mut s, &format!("down{i}"), prev, c, temb, rng));
            prev = c;
        }
        let mid = ResBlock::new(&mut s, "mid", prev, prev, temb, rng);
        let mut up = Vec::new();
        for i in (0..chans.len() - 1).rev() {
            up.push(ResBlock::new(&mut s, &format!("up{i}"), prev + chans[i], chans[i], temb, rng));
            prev = chans[i];
        }
        let out = Conv2d::new(&mut s, "out", prev, config.in_channels, 3, 1, 0.1, rng);
        let layout = Layout { time1, time2, stem, down, mid, up, out };
        Ok(Self { config, layout, params: s })
    }

    /// Rebuild the architecture and load weights saved by [`UNet::weights_blob`].
    pub fn from_blob(config: UNetConfig, blob: &[u8]) -> Result<Self> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut net = Self::new(config, &mut rng)?;
        net.params.load_safetensors(blob)?;
        Ok(net)
    }

    pub fn weights_blob(&self) -> Result<Vec<u8>> {
        Ok(self.params.to_safetensors()?)
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    /// `x [B, C, H, W]` to noise estimate of the same shape.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var, t: &[usize]) -> Var {
        let l = &self.layout;
        let emb = g.constant(sinusoidal_embedding(t, self.config.time_dim));
        let e = l.time1.forward(g, p, emb);
        let e = g.silu(e);
        let e = l.time2.forward(g, p, e);
        let temb = g.silu(e);
        let mut h = l.stem.forward(g, p, x);
        let mut skips = Vec::new();
        let levels = l.down.len();
        for (i, block) in l.down.iter().enumerate() {
            h = block.forward(g, p, h, temb);
            if i + 1 < levels {
                skips.push(h);
                h = g.avg_pool2(h);
            }
        }
        h = l.mid.forward(g, p, h, temb);
        for block in &l.up {
            h = g.upsample2(h);
            let s = skips.pop().expect("one skip per upsampling");
            h = g.concat_channels(h, s);
            h = block.forward(g, p, h, temb);
        }
        let h = g.silu(h);
        l.out.forward(g, p, h)
    }
}

/// Anything that estimates the noise in a model-domain batch `x_t`.
pub trait NoisePredictor {
    fn predict_noise(&self, x_t: &Tensor<f32>, t: &[usize]) -> Tensor<f32>;
}

impl NoisePredictor for UNet {
    fn predict_noise(&self, x_t: &Tensor<f32>, t: &[usize]) -> Tensor<f32> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let x = g.constant(x_t.clone());
        let y = self.forward(&mut g, &p, x, t);
        g.value(y).clone()
    }
}

/// Denoiser that knows the clean batch and returns the exact noise. Used to
/// test the samplers independently of any learned model.
#[derive(Clone, Debug)]
pub struct OracleDenoiser {
    pub x0: Tensor<f32>,
    pub schedule: super::NoiseSchedule,
}

impl NoisePredictor for OracleDenoiser {
    fn predict_noise(&self, x_t: &Tensor<f32>, t: &[usize]) -> Tensor<f32> {
        let b = x_t.shape()[0];
        let per = x_t.len() / b;
        let mut out = Vec::with_capacity(x_t.len());
        for (i, &ti) in t.iter().enumerate() {
            let ab = self.schedule.alpha_bar(ti);
            let (ca, cb) = (ab.sqrt(), (1.0 - ab).sqrt());
            let xs = &x_t.data()[i * per..(i + 1) * per];
            let x0 = &self.x0.data()[i * per..(i + 1) * per];
            out.extend(xs.iter().zip(x0).map(|(&x, &x0)| ((x as f64 - ca * x0 as f64) / cb) as f32));
        }
        Tensor::new(x_t.shape(), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_shape_matches_input_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = UNet::new(UNetConfig { base_width: 4, time_dim: 8, ..Default::default() }, &mut rng).unwrap();
        let x = Tensor::<f32>::randn(&[3, 1, 16, 16], 1.0, &mut rng);
        let y = net.predict_noise(&x, &[1, 50, 200]);
        assert_eq!(y.shape(), x.shape());
        assert!(y.all_finite());
        assert_eq!(y, net.predict_noise(&x, &[1, 50, 200]));
    }

    #[test]
    fn weights_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = UNetConfig { base_width: 4, time_dim: 8, ..Default::default() };
        let net = UNet::new(cfg.clone(), &mut rng).unwrap();
        let back = UNet::from_blob(cfg, &net.weights_blob().unwrap()).unwrap();
        assert_eq!(back.params, net.params);
    }
}
