use rand::Rng;
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::{Gradients, Graph, NnError, Real, Tensor, Var};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

/// Graph nodes holding a [`ParamStore`]'s tensors for one pass.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Put every tensor on the graph as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound { vars: self.tensors.iter().map(|t| g.leaf(t.clone())).collect() }
    }

    /// Put every tensor on the graph as a constant (inference, input gradients).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bound {
        Bound { vars: self.tensors.iter().map(|t| g.constant(t.clone())).collect() }
    }

    /// Per-parameter gradients in store order; zeros for unused parameters.
    pub fn collect_grads(&self, grads: &mut Gradients<T>, bound: &Bound) -> Vec<Tensor<T>> {
        self.tensors
            .iter()
            .zip(&bound.vars)
            .map(|(t, &v)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    /// `self = decay * self + (1 - decay) * other`.
    pub fn ema_update(&mut self, other: &Self, decay: f64) {
        let d = T::from_f64_lossy(decay);
        let e = T::one() - d;
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = d * *x + e * y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Serialize to the safetensors format.
    pub fn to_safetensors(&self) -> Result<Vec<u8>, NnError> {
        let dtype = match T::DTYPE {
            "f32" => Dtype::F32,
            _ => Dtype::F64,
        };
        let bytes: Vec<Vec<u8>> = self
            .tensors
            .iter()
            .map(|t| {
                t.data()
                    .iter()
                    .flat_map(|v| match dtype {
                        Dtype::F32 => (v.as_f64() as f32).to_le_bytes().to_vec(),
                        _ => v.as_f64().to_le_bytes().to_vec(),
                    })
                    .collect()
            })
            .collect();
        let views = self
            .names
            .iter()
            .zip(&self.tensors)
            .zip(&bytes)
            .map(|((n, t), b)| Ok((n.clone(), TensorView::new(dtype, t.shape().to_vec(), b)?)))
            .collect::<Result<Vec<_>, safetensors::SafeTensorError>>()?;
        Ok(safetensors::serialize(views, &None)?)
    }

    /// Overwrite every tensor from a safetensors blob, matching by name and shape.
    pub fn load_safetensors(&mut self, blob: &[u8]) -> Result<(), NnError> {
        let st = SafeTensors::deserialize(blob)?;
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let view = st.tensor(name).map_err(|_| NnError::MissingTensor(name.clone()))?;
            if view.shape() != t.shape() {
                return Err(NnError::Shape(format!(
                    "{name}: stored {:?}, model expects {:?}",
                    view.shape(),
                    t.shape()
                )));
            }
            let raw = view.data();
            let values: Vec<T> = match view.dtype() {
                Dtype::F32 => raw
                    .chunks_exact(4)
                    .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                    .collect(),
                Dtype::F64 => raw
                    .chunks_exact(8)
                    .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                    .collect(),
                other => return Err(NnError::Dtype(format!("{name}: {other:?}"))),
            };
            t.data_mut().copy_from_slice(&values);
        }
        Ok(())
    }
}

/// LeCun-uniform initialisation, `U(-sqrt(3/fan_in), sqrt(3/fan_in)) * gain`.
pub fn lecun_uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut R) -> Tensor<T> {
    let bound = (3.0 / fan_in as f64).sqrt() * gain;
    if bound == 0.0 {
        return Tensor::zeros(shape);
    }
    Tensor::uniform(shape, bound, rng)
}

/// Square-kernel convolution layer.
#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    w: ParamId,
    b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * k * k;
        let w = store.add(format!("{name}.weight"), lecun_uniform(&[cout, cin, k, k], fan_in, gain, rng));
        let b = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Self { w, b, stride, pad: k / 2 }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        g.conv2d(x, p.var(self.w), Some(p.var(self.b)), self.stride, self.pad)
    }
}

/// Fully connected layer.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fin: usize,
        fout: usize,
        bias: bool,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.weight"), lecun_uniform(&[fout, fin], fin, gain, rng));
        let b = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[fout])));
        Self { w, b }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        g.linear(x, p.var(self.w), self.b.map(|b| p.var(b)))
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }
}

/// Transformer-style sinusoidal embedding of integer timesteps, `[len(t), dim]`.
pub fn sinusoidal_embedding<T: Real>(t: &[usize], dim: usize) -> Tensor<T> {
    assert!(dim.is_multiple_of(2), "embedding dim must be even");
    let half = dim / 2;
    let mut out = Vec::with_capacity(t.len() * dim);
    for &step in t {
        let s = step as f64;
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            out.push(T::from_f64_lossy((s * freq).sin()));
        }
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            out.push(T::from_f64_lossy((s * freq).cos()));
        }
    }
    Tensor::new(&[t.len(), dim], out)
}
