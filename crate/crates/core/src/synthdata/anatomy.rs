//! Analytic chest phantom and per-class lesion renderers.
//!
//! All geometry lives in normalized coordinates `(u, v) in [0, 1]^2`
//! (u: left to right, v: top to bottom) so the phantom renders at any size.

use rand::Rng;

use crate::imaging::Mask;
use crate::taxonomy::*;

/// Per-sample smooth deformation of the shared anatomy.
#[derive(Clone, Debug, PartialEq)]
pub struct Anatomy {
    pub shift: (f64, f64),
    pub scale: f64,
    pub lung_width: f64,
    pub heart_size: f64,
    pub gain: f64,
    pub texture: [f64; 3],
    pub rib_phase: f64,
}

/// Geometric knobs that some findings change.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Modifiers {
    pub heart: f64,
    pub mediastinum: f64,
}

impl Default for Modifiers {
    fn default() -> Self {
        Self { heart: 1.0, mediastinum: 1.0 }
    }
}

/// Soft membership of an ellipse: ~1 inside, ~0 outside, logistic edge.
fn inside(u: f64, v: f64, cx: f64, cy: f64, rx: f64, ry: f64, soft: f64) -> f64 {
    let r = (((u - cx) / rx).powi(2) + ((v - cy) / ry).powi(2)).sqrt();
    1.0 / (1.0 + ((r - 1.0) / soft).exp())
}

fn window(x: f64, lo: f64, hi: f64, soft: f64) -> f64 {
    let a = 1.0 / (1.0 + (-(x - lo) / soft).exp());
    let b = 1.0 / (1.0 + ((x - hi) / soft).exp());
    a * b
}

fn gauss(u: f64, v: f64, cx: f64, cy: f64, sigma: f64) -> f64 {
    (-((u - cx).powi(2) + (v - cy).powi(2)) / (2.0 * sigma * sigma)).exp()
}

pub(crate) const TISSUE: f64 = 0.46;
pub(crate) const AIR: f64 = 0.04;
pub(crate) const LUNG: f64 = 0.17;
pub(crate) const MEDIASTINUM: f64 = 0.68;
pub(crate) const HEART: f64 = 0.72;
pub(crate) const HEART_CENTER: (f64, f64) = (0.54, 0.63);
pub(crate) const HEART_RADII: (f64, f64) = (0.13, 0.10);

impl Anatomy {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            shift: (rng.gen_range(-0.025..0.025), rng.gen_range(-0.025..0.025)),
            scale: rng.gen_range(0.96..1.04),
            lung_width: rng.gen_range(0.93..1.07),
            heart_size: rng.gen_range(0.94..1.06),
            gain: rng.gen_range(0.92..1.08),
            texture: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            rib_phase: rng.gen_range(-0.15..0.15),
        }
    }

    /// Undeformed anatomy.
    pub fn canonical() -> Self {
        Self {
            shift: (0.0, 0.0),
            scale: 1.0,
            lung_width: 1.0,
            heart_size: 1.0,
            gain: 1.0,
            texture: [0.0; 3],
            rib_phase: 0.0,
        }
    }

    /// Pixel centre `(y, x)` mapped back into canonical coordinates.
    pub(crate) fn coords(&self, y: usize, x: usize, size: usize) -> (f64, f64) {
        let u = (x as f64 + 0.5) / size as f64;
        let v = (y as f64 + 0.5) / size as f64;
        ((u - 0.5 - self.shift.0) / self.scale + 0.5, (v - 0.5 - self.shift.1) / self.scale + 0.5)
    }

    pub(crate) fn lung(&self, u: f64, v: f64) -> f64 {
        let rx = 0.15 * self.lung_width;
        inside(u, v, 0.31, 0.45, rx, 0.27, 0.05).max(inside(u, v, 0.69, 0.45, rx, 0.27, 0.05))
    }

    fn body(&self, u: f64, v: f64) -> f64 {
        inside(u, v, 0.5, 0.55, 0.47, 0.52, 0.04)
    }

    fn value(&self, u: f64, v: f64, m: Modifiers) -> f64 {
        let body = self.body(u, v);
        let lung = self.lung(u, v);
        let mut val = AIR + body * (TISSUE - AIR);
        val = val * (1.0 - lung) + LUNG * lung;
        let rib = (std::f64::consts::PI * (v * 7.0 + self.rib_phase)).cos();
        val += 0.05 * lung * rib * rib;
        let med = inside(u, v, 0.5, 0.32, 0.055 * m.mediastinum, 0.24, 0.08);
        val = val * (1.0 - med) + MEDIASTINUM * med;
        let hs = self.heart_size * m.heart;
        let heart = inside(u, v, HEART_CENTER.0, HEART_CENTER.1, HEART_RADII.0 * hs, HEART_RADII.1 * hs, 0.05);
        val = val * (1.0 - heart) + HEART * heart;
        let tau = std::f64::consts::TAU;
        let tex = self.texture[0] * (tau * (1.3 * u + 0.7 * v)).cos()
            + self.texture[1] * (tau * (0.6 * u - 1.7 * v) + 1.0).cos()
            + self.texture[2] * (tau * (2.1 * u + 1.1 * v) + 2.0).cos();
        AIR + self.gain * (val - AIR) + 0.025 * tex * body
    }

    pub(crate) fn render(&self, size: usize, m: Modifiers) -> Vec<f64> {
        let mut out = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let (u, v) = self.coords(y, x, size);
                out.push(self.value(u, v, m));
            }
        }
        out
    }

    fn field(&self, size: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let (u, v) = self.coords(y, x, size);
                out.push(f(u, v));
            }
        }
        out
    }

    /// Additive intensity change produced by finding `class` on this anatomy.
    pub(crate) fn lesion<R: Rng + ?Sized>(&self, class: usize, size: usize, rng: &mut R) -> Vec<f64> {
        let geometric = |m: Modifiers| -> Vec<f64> {
            let base = self.render(size, Modifiers::default());
            self.render(size, m).iter().zip(&base).map(|(a, b)| a - b).collect()
        };
        match class {
            ENLARGED_CARDIOMEDIASTINUM => {
                geometric(Modifiers { mediastinum: rng.gen_range(1.6..1.9), ..Default::default() })
            }
            CARDIOMEGALY => geometric(Modifiers { heart: rng.gen_range(1.3..1.45), ..Default::default() }),
            LUNG_OPACITY => {
                let amp = rng.gen_range(0.10..0.14);
                self.field(size, |u, v| amp * gauss(u, v, 0.70, 0.30, 0.07) * self.lung(u, v))
            }
            LUNG_LESION => {
                let (cx, cy) = (rng.gen_range(0.22..0.36), rng.gen_range(0.24..0.38));
                let amp = rng.gen_range(0.28..0.38);
                self.field(size, |u, v| amp * gauss(u, v, cx, cy, 0.028) * self.lung(u, v))
            }
            EDEMA => {
                let dy = rng.gen_range(-0.02..0.02);
                let amp = rng.gen_range(0.18..0.25);
                self.field(size, |u, v| {
                    amp * (gauss(u, v, 0.38, 0.48 + dy, 0.04) + gauss(u, v, 0.62, 0.48 + dy, 0.04)) * self.lung(u, v)
                })
            }
            CONSOLIDATION | PNEUMONIA => {
                let cx = if class == CONSOLIDATION { rng.gen_range(0.66..0.76) } else { rng.gen_range(0.24..0.34) };
                let cy = rng.gen_range(0.45..0.52);
                let amp = rng.gen_range(0.28..0.38);
                self.field(size, |u, v| amp * gauss(u, v, cx, cy, 0.04) * self.lung(u, v))
            }
            ATELECTASIS => {
                let v0 = rng.gen_range(0.38..0.44);
                let amp = rng.gen_range(0.22..0.30);
                self.field(size, |u, v| {
                    amp * (-((v - v0) / 0.015).powi(2)).exp() * window(u, 0.20, 0.38, 0.01) * self.lung(u, v)
                })
            }
            PNEUMOTHORAX => {
                let amp = rng.gen_range(0.12..0.15);
                self.field(size, |u, v| -amp * gauss(u, v, 0.79, 0.23, 0.05) * self.lung(u, v))
            }
            PLEURAL_EFFUSION => {
                let level = rng.gen_range(0.64..0.68);
                let amp = rng.gen_range(0.28..0.36);
                self.field(size, |u, v| amp * self.lung(u, v) / (1.0 + (-(v - level) / 0.012).exp()))
            }
            PLEURAL_OTHER => {
                let amp = rng.gen_range(0.22..0.30);
                self.field(size, |u, v| {
                    amp * (-((u - 0.175) / 0.018).powi(2)).exp() * window(v, 0.28, 0.58, 0.02)
                })
            }
            FRACTURE => {
                let amp = rng.gen_range(0.26..0.34);
                let (ax, ay, bx, by) = (0.86, 0.36, 0.92, 0.44);
                self.field(size, |u, v| {
                    let (dx, dy) = (bx - ax, by - ay);
                    let s = (((u - ax) * dx + (v - ay) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
                    let d2 = (u - ax - s * dx).powi(2) + (v - ay - s * dy).powi(2);
                    amp * (-d2 / (0.012f64 * 0.012)).exp()
                })
            }
            SUPPORT_DEVICES => {
                let amp = rng.gen_range(0.26..0.32);
                self.field(size, |u, v| {
                    let tube = (-((u - 0.45) / 0.016).powi(2)).exp() * window(v, 0.02, 0.50, 0.01);
                    let box_ = window(u, 0.165, 0.235, 0.006) * window(v, 0.085, 0.155, 0.006);
                    amp * tube.max(box_)
                })
            }
            _ => vec![0.0; size * size],
        }
    }
}

/// Axis-aligned boxes `(u0, u1, v0, v1)` covering every placement of a finding
/// under any sampled deformation.
pub const CANONICAL_BOXES: [&[(f64, f64, f64, f64)]; NUM_FINE] = [
    &[],
    &[(0.36, 0.64, 0.08, 0.60)],
    &[(0.34, 0.76, 0.46, 0.80)],
    &[(0.56, 0.86, 0.16, 0.48)],
    &[(0.16, 0.42, 0.18, 0.44)],
    &[(0.28, 0.72, 0.38, 0.58)],
    &[(0.58, 0.84, 0.38, 0.60)],
    &[(0.16, 0.42, 0.38, 0.60)],
    &[(0.14, 0.42, 0.32, 0.50)],
    &[(0.70, 0.90, 0.12, 0.34)],
    &[(0.12, 0.88, 0.60, 0.78)],
    &[(0.10, 0.24, 0.24, 0.62)],
    &[(0.80, 0.96, 0.30, 0.50)],
    &[(0.10, 0.52, 0.0, 0.58)],
];

/// Region where findings of fine class `c` can appear.
pub fn canonical_region(c: usize, size: usize) -> Mask {
    let boxes = CANONICAL_BOXES[c];
    Mask::from_fn(size, size, |y, x| {
        let u = (x as f64 + 0.5) / size as f64;
        let v = (y as f64 + 0.5) / size as f64;
        boxes.iter().any(|&(u0, u1, v0, v1)| u >= u0 && u <= u1 && v >= v0 && v <= v1)
    })
}

/// Union of [`canonical_region`] over the fine members of super-class `s`.
pub fn canonical_super_region(s: usize, size: usize) -> Mask {
    (0..NUM_FINE)
        .filter(|&c| FINE_TO_SUPER[c] == Some(s))
        .map(|c| canonical_region(c, size))
        .fold(Mask::empty(size, size), |a, b| a.union(&b))
}
