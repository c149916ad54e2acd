//! Tape-style reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value; [`Graph::backward`]
//! walks the tape in reverse. Values are kept until the graph is dropped, so a
//! graph is meant to live for a single forward/backward pass.

use crate::kernels::{self, ConvGeom};
use crate::{Real, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Silu(Var),
    Tanh(Var),
    Exp(Var),
    Reshape(Var),
    Transpose(Var),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    AddChannel { x: Var, bias: Var },
    AvgPool2(Var),
    Upsample2(Var),
    GlobalAvgPool(Var),
    ConcatChannels(Var, Var),
    SumAll(Var),
    MeanAll(Var),
    L2NormalizeRows { x: Var, eps: T },
    MulScalarVar { x: Var, s: Var },
    SoftmaxCe { logits: Var, targets: Vec<usize> },
    BceLogits { logits: Var, targets: Tensor<T>, pos_weight: Option<Vec<T>> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by a backward pass, indexed by leaf [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus<T: Real>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(value, op, needs_grad)
    }

    /// Constant input: no gradient is tracked through it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf (parameters, or inputs whose gradient is wanted).
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push_op(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push_op(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push_op(v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::from_f64_lossy(s);
        let v = self.value(a).scaled(s);
        self.push_op(v, Op::Scale(a, s), &[a])
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * sigmoid(x));
        self.push_op(v, Op::Silu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        self.push_op(v, Op::Tanh(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.exp());
        self.push_op(v, Op::Exp(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.value(a).clone().reshape(shape);
        self.push_op(v, Op::Reshape(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose2();
        self.push_op(v, Op::Transpose(a), &[a])
    }

    /// `op(a) * op(b)` for rank-2 operands, `op` being an optional transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (ar, ac) = self.value(a).dims2();
        let (br, bc) = self.value(b).dims2();
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "matmul inner dimensions differ");
        let mut out = vec![T::zero(); m * n];
        T::gemm(ta, tb, m, n, k, T::one(), self.value(a).data(), self.value(b).data(), T::zero(), &mut out);
        self.push_op(Tensor::new(&[m, n], out), Op::MatMul { a, b, ta, tb }, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    /// `x [N, in] * w[out, in]^T + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (n, fin) = self.value(x).dims2();
        let (fout, fin2) = self.value(w).dims2();
        assert_eq!(fin, fin2, "linear: input has {fin} features, weight expects {fin2}");
        let mut out = vec![T::zero(); n * fout];
        if let Some(b) = b {
            let bias = self.value(b).data();
            assert_eq!(bias.len(), fout, "linear: bias length");
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(bias);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        T::gemm(false, true, n, fout, fin, T::one(), self.value(x).data(), self.value(w).data(), beta, &mut out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push_op(Tensor::new(&[n, fout], out), Op::Linear { x, w, b }, &inputs)
    }

    /// NCHW convolution with a square `[Cout, Cin, k, k]` kernel.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (bsz, cin, h, wd) = self.value(x).dims4();
        let (cout, cin2, k, k2) = self.value(w).dims4();
        assert_eq!(cin, cin2, "conv2d: input has {cin} channels, kernel expects {cin2}");
        assert_eq!(k, k2, "conv2d: non-square kernel");
        let g = ConvGeom::new(cin, h, wd, k, stride, pad);
        let (rows, cols) = (g.col_rows(), g.col_cols());
        let gs = group_size(bsz, rows * cols);
        let mut out = vec![T::zero(); bsz * cout * cols];
        let mut col = vec![T::zero(); rows * cols * gs];
        let mut res = vec![T::zero(); cout * cols * gs];
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bias = b.map(|b| self.value(b).data());
        let plane = cin * h * wd;
        for s0 in (0..bsz).step_by(gs) {
            let n = gs.min(bsz - s0);
            let ld = n * cols;
            for j in 0..n {
                let xin = &xs[(s0 + j) * plane..(s0 + j + 1) * plane];
                kernels::im2col(xin, &g, &mut col[j * cols..], ld);
            }
            T::gemm(false, false, cout, ld, rows, T::one(), ws, &col[..rows * ld], T::zero(), &mut res[..cout * ld]);
            for j in 0..n {
                let dst = &mut out[(s0 + j) * cout * cols..(s0 + j + 1) * cout * cols];
                for oc in 0..cout {
                    let src = &res[oc * ld + j * cols..oc * ld + (j + 1) * cols];
                    let d = &mut dst[oc * cols..(oc + 1) * cols];
                    match bias {
                        Some(bias) => d.iter_mut().zip(src).for_each(|(d, &v)| *d = v + bias[oc]),
                        None => d.copy_from_slice(src),
                    }
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        let value = Tensor::new(&[bsz, cout, g.ho, g.wo], out);
        self.push_op(value, Op::Conv2d { x, w, b, stride, pad }, &inputs)
    }

    /// `x[B, C, H, W] + bias[B, C]` broadcast over the spatial axes.
    pub fn add_channel(&mut self, x: Var, bias: Var) -> Var {
        let (b, c, h, w) = self.value(x).dims4();
        assert_eq!(self.value(bias).shape(), &[b, c], "add_channel: bias must be [B, C]");
        let mut v = self.value(x).clone();
        let bs = self.value(bias).data();
        for (i, plane) in v.data_mut().chunks_mut(h * w).enumerate() {
            let add = bs[i];
            plane.iter_mut().for_each(|p| *p += add);
        }
        self.push_op(v, Op::AddChannel { x, bias }, &[x, bias])
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let (b, c, h, w) = self.value(x).dims4();
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial dims");
        let out = kernels::avg_pool2(self.value(x).data(), b * c, h, w);
        self.push_op(Tensor::new(&[b, c, h / 2, w / 2], out), Op::AvgPool2(x), &[x])
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let (b, c, h, w) = self.value(x).dims4();
        let out = kernels::upsample2(self.value(x).data(), b * c, h, w);
        self.push_op(Tensor::new(&[b, c, 2 * h, 2 * w], out), Op::Upsample2(x), &[x])
    }

    /// `[B, C, H, W] -> [B, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (b, c, h, w) = self.value(x).dims4();
        let inv = T::from_f64_lossy(1.0 / (h * w) as f64);
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().fold(T::zero(), |a, &v| a + v) * inv)
            .collect();
        self.push_op(Tensor::new(&[b, c], out), Op::GlobalAvgPool(x), &[x])
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (n, ca, h, w) = self.value(a).dims4();
        let (n2, cb, h2, w2) = self.value(b).dims4();
        assert_eq!((n, h, w), (n2, h2, w2), "concat_channels: batch/spatial dims differ");
        let (sa, sb) = (ca * h * w, cb * h * w);
        let mut out = Vec::with_capacity(n * (sa + sb));
        for s in 0..n {
            out.extend_from_slice(&self.value(a).data()[s * sa..(s + 1) * sa]);
            out.extend_from_slice(&self.value(b).data()[s * sb..(s + 1) * sb]);
        }
        self.push_op(Tensor::new(&[n, ca + cb, h, w], out), Op::ConcatChannels(a, b), &[a, b])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push_op(Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = T::from_f64_lossy(self.value(a).len() as f64);
        let s = self.value(a).sum() / n;
        self.push_op(Tensor::scalar(s), Op::MeanAll(a), &[a])
    }

    /// Rows of `x [N, D]` scaled to unit L2 norm.
    pub fn l2_normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let (n, d) = self.value(x).dims2();
        let eps = T::from_f64_lossy(eps);
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(d) {
            let norm = (row.iter().fold(T::zero(), |a, &v| a + v * v) + eps).sqrt();
            row.iter_mut().for_each(|v| *v /= norm);
        }
        debug_assert_eq!(out.len(), n * d);
        self.push_op(out, Op::L2NormalizeRows { x, eps }, &[x])
    }

    /// `x * s` where `s` is a single-element node.
    pub fn mul_scalar_var(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(self.value(s).len(), 1, "mul_scalar_var: scale must have one element");
        let sv = self.value(s).data()[0];
        let v = self.value(x).scaled(sv);
        self.push_op(v, Op::MulScalarVar { x, s }, &[x, s])
    }

    /// Mean over rows of `-log softmax(logits[i])[targets[i]]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let (n, k) = self.value(logits).dims2();
        assert_eq!(targets.len(), n, "softmax_cross_entropy: one target per row");
        let mut total = T::zero();
        for (row, &t) in self.value(logits).data().chunks(k).zip(targets) {
            assert!(t < k, "target {t} out of range for {k} classes");
            let m = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
            let lse = m + row.iter().fold(T::zero(), |a, &v| a + (v - m).exp()).ln();
            total += lse - row[t];
        }
        let loss = total / T::from_f64_lossy(n as f64);
        self.push_op(Tensor::scalar(loss), Op::SoftmaxCe { logits, targets: targets.to_vec() }, &[logits])
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`
    /// (same shape `[N, K]`), with optional per-column positive weights.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Tensor<T>, pos_weight: Option<Vec<T>>) -> Var {
        let shape = self.value(logits).shape().to_vec();
        assert_eq!(targets.shape(), &shape[..], "bce_with_logits: target shape");
        let k = *shape.last().expect("bce_with_logits on a rank-0 tensor");
        if let Some(pw) = &pos_weight {
            assert_eq!(pw.len(), k, "bce_with_logits: one positive weight per column");
        }
        let mut total = T::zero();
        for (i, (&z, &y)) in self.value(logits).data().iter().zip(targets.data()).enumerate() {
            let pw = pos_weight.as_ref().map_or(T::one(), |p| p[i % k]);
            // -[pw*y*log(sig(z)) + (1-y)*log(1-sig(z))]
            total += pw * y * softplus(-z) + (T::one() - y) * softplus(z);
        }
        let loss = total / T::from_f64_lossy(targets.len() as f64);
        self.push_op(Tensor::scalar(loss), Op::BceLogits { logits, targets, pos_weight }, &[logits])
    }

    /// Backward pass from a single-element `loss` node, seeded with 1.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward() needs a scalar loss; use backward_with");
        self.backward_with(loss, Tensor::full(self.value(loss).shape(), T::one()))
    }

    /// Backward pass from `root` with an explicit upstream gradient.
    pub fn backward_with(&self, root: Var, seed: Tensor<T>) -> Gradients<T> {
        assert_eq!(seed.shape(), self.value(root).shape(), "seed shape must match root");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backprop_node(node, &gy, &mut grads);
        }
        Gradients { grads }
    }

    fn accum(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node<T>, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(grads, *a, gy.clone());
                self.accum(grads, *b, gy.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, gy.clone());
                self.accum(grads, *b, gy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.needs_grad(*a) {
                    self.accum(grads, *a, gy.zip_map(self.value(*b), |g, y| g * y));
                }
                if self.needs_grad(*b) {
                    self.accum(grads, *b, gy.zip_map(self.value(*a), |g, x| g * x));
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accum(grads, *a, gy.map(|g| g * s));
            }
            Op::Silu(a) => {
                let d = gy.zip_map(self.value(*a), |g, x| {
                    let s = sigmoid(x);
                    g * s * (T::one() + x * (T::one() - s))
                });
                self.accum(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = gy.zip_map(&node.value, |g, y| g * (T::one() - y * y));
                self.accum(grads, *a, d);
            }
            Op::Exp(a) => {
                let d = gy.zip_map(&node.value, |g, y| g * y);
                self.accum(grads, *a, d);
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accum(grads, *a, gy.clone().reshape(&shape));
            }
            Op::Transpose(a) => self.accum(grads, *a, gy.transpose2()),
            Op::MatMul { a, b, ta, tb } => self.backprop_matmul(*a, *b, *ta, *tb, gy, grads),
            Op::Linear { x, w, b } => {
                let (n, fin) = self.value(*x).dims2();
                let (fout, _) = self.value(*w).dims2();
                if self.needs_grad(*x) {
                    let mut dx = vec![T::zero(); n * fin];
                    T::gemm(false, false, n, fin, fout, T::one(), gy.data(), self.value(*w).data(), T::zero(), &mut dx);
                    self.accum(grads, *x, Tensor::new(&[n, fin], dx));
                }
                if self.needs_grad(*w) {
                    let mut dw = vec![T::zero(); fout * fin];
                    T::gemm(true, false, fout, fin, n, T::one(), gy.data(), self.value(*x).data(), T::zero(), &mut dw);
                    self.accum(grads, *w, Tensor::new(&[fout, fin], dw));
                }
                if let Some(b) = b {
                    let mut db = vec![T::zero(); fout];
                    for row in gy.data().chunks(fout) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    self.accum(grads, *b, Tensor::new(&[fout], db));
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => self.backprop_conv(*x, *w, *b, *stride, *pad, gy, grads),
            Op::AddChannel { x, bias } => {
                self.accum(grads, *x, gy.clone());
                if self.needs_grad(*bias) {
                    let (b, c, h, w) = gy.dims4();
                    let db: Vec<T> = gy.data().chunks(h * w).map(|p| p.iter().fold(T::zero(), |a, &v| a + v)).collect();
                    self.accum(grads, *bias, Tensor::new(&[b, c], db));
                }
            }
            Op::AvgPool2(a) => {
                let (b, c, h, w) = self.value(*a).dims4();
                let (ho, wo) = (h / 2, w / 2);
                let quarter = T::from_f64_lossy(0.25);
                let mut dx = vec![T::zero(); b * c * h * w];
                for p in 0..b * c {
                    let src = &gy.data()[p * ho * wo..(p + 1) * ho * wo];
                    let dst = &mut dx[p * h * w..(p + 1) * h * w];
                    for y in 0..h {
                        for xx in 0..w {
                            dst[y * w + xx] = src[(y / 2) * wo + xx / 2] * quarter;
                        }
                    }
                }
                self.accum(grads, *a, Tensor::new(&[b, c, h, w], dx));
            }
            Op::Upsample2(a) => {
                let (b, c, h, w) = self.value(*a).dims4();
                let pooled = kernels::avg_pool2(gy.data(), b * c, 2 * h, 2 * w);
                let four = T::from_f64_lossy(4.0);
                let dx = pooled.into_iter().map(|v| v * four).collect();
                self.accum(grads, *a, Tensor::new(&[b, c, h, w], dx));
            }
            Op::GlobalAvgPool(a) => {
                let (b, c, h, w) = self.value(*a).dims4();
                let inv = T::from_f64_lossy(1.0 / (h * w) as f64);
                let mut dx = Vec::with_capacity(b * c * h * w);
                for &g in gy.data() {
                    dx.extend(std::iter::repeat_n(g * inv, h * w));
                }
                self.accum(grads, *a, Tensor::new(&[b, c, h, w], dx));
            }
            Op::ConcatChannels(a, b) => {
                let (n, ca, h, w) = self.value(*a).dims4();
                let cb = self.value(*b).dims4().1;
                let (sa, sb) = (ca * h * w, cb * h * w);
                let mut da = Vec::with_capacity(n * sa);
                let mut db = Vec::with_capacity(n * sb);
                for s in 0..n {
                    let chunk = &gy.data()[s * (sa + sb)..(s + 1) * (sa + sb)];
                    da.extend_from_slice(&chunk[..sa]);
                    db.extend_from_slice(&chunk[sa..]);
                }
                self.accum(grads, *a, Tensor::new(&[n, ca, h, w], da));
                self.accum(grads, *b, Tensor::new(&[n, cb, h, w], db));
            }
            Op::SumAll(a) => {
                let g = gy.data()[0];
                self.accum(grads, *a, Tensor::full(self.value(*a).shape(), g));
            }
            Op::MeanAll(a) => {
                let n = T::from_f64_lossy(self.value(*a).len() as f64);
                let g = gy.data()[0] / n;
                self.accum(grads, *a, Tensor::full(self.value(*a).shape(), g));
            }
            Op::L2NormalizeRows { x, eps } => {
                let (n, d) = self.value(*x).dims2();
                let mut dx = vec![T::zero(); n * d];
                for r in 0..n {
                    let xr = &self.value(*x).data()[r * d..(r + 1) * d];
                    let yr = &node.value.data()[r * d..(r + 1) * d];
                    let gr = &gy.data()[r * d..(r + 1) * d];
                    let norm = (xr.iter().fold(T::zero(), |a, &v| a + v * v) + *eps).sqrt();
                    let dot = yr.iter().zip(gr).fold(T::zero(), |a, (&y, &g)| a + y * g);
                    for j in 0..d {
                        dx[r * d + j] = (gr[j] - yr[j] * dot) / norm;
                    }
                }
                self.accum(grads, *x, Tensor::new(&[n, d], dx));
            }
            Op::MulScalarVar { x, s } => {
                let sv = self.value(*s).data()[0];
                if self.needs_grad(*x) {
                    self.accum(grads, *x, gy.scaled(sv));
                }
                if self.needs_grad(*s) {
                    let ds = gy.data().iter().zip(self.value(*x).data()).fold(T::zero(), |a, (&g, &v)| a + g * v);
                    self.accum(grads, *s, Tensor::new(self.value(*s).shape(), vec![ds]));
                }
            }
            Op::SoftmaxCe { logits, targets } => {
                let (n, k) = self.value(*logits).dims2();
                let scale = gy.data()[0] / T::from_f64_lossy(n as f64);
                let mut dz = vec![T::zero(); n * k];
                for (r, (row, &t)) in self.value(*logits).data().chunks(k).zip(targets).enumerate() {
                    let m = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
                    let denom = row.iter().fold(T::zero(), |a, &v| a + (v - m).exp());
                    for j in 0..k {
                        let p = (row[j] - m).exp() / denom;
                        let onehot = if j == t { T::one() } else { T::zero() };
                        dz[r * k + j] = (p - onehot) * scale;
                    }
                }
                self.accum(grads, *logits, Tensor::new(&[n, k], dz));
            }
            Op::BceLogits { logits, targets, pos_weight } => {
                let shape = self.value(*logits).shape().to_vec();
                let k = *shape.last().expect("rank >= 1");
                let scale = gy.data()[0] / T::from_f64_lossy(targets.len() as f64);
                let dz = self
                    .value(*logits)
                    .data()
                    .iter()
                    .zip(targets.data())
                    .enumerate()
                    .map(|(i, (&z, &y))| {
                        let pw = pos_weight.as_ref().map_or(T::one(), |p| p[i % k]);
                        let s = sigmoid(z);
                        (-pw * y * (T::one() - s) + (T::one() - y) * s) * scale
                    })
                    .collect();
                self.accum(grads, *logits, Tensor::new(&shape, dz));
            }
        }
    }

    fn backprop_matmul(&self, a: Var, b: Var, ta: bool, tb: bool, gy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let (m, n) = gy.dims2();
        let ashape = self.value(a).shape().to_vec();
        let bshape = self.value(b).shape().to_vec();
        let k = if ta { ashape[0] } else { ashape[1] };
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        if self.needs_grad(a) {
            let mut da = vec![T::zero(); m * k];
            if ta {
                // stored a is [k, m]: da = op(b) * gy^T
                T::gemm(tb, true, k, m, n, T::one(), bv, gy.data(), T::zero(), &mut da);
            } else {
                // da = gy * op(b)^T
                T::gemm(false, !tb, m, k, n, T::one(), gy.data(), bv, T::zero(), &mut da);
            }
            self.accum(grads, a, Tensor::new(&ashape, da));
        }
        if self.needs_grad(b) {
            let mut db = vec![T::zero(); k * n];
            if tb {
                // stored b is [n, k]: db = gy^T * op(a)
                T::gemm(true, ta, n, k, m, T::one(), gy.data(), av, T::zero(), &mut db);
            } else {
                // db = op(a)^T * gy
                T::gemm(!ta, false, k, n, m, T::one(), av, gy.data(), T::zero(), &mut db);
            }
            self.accum(grads, b, Tensor::new(&bshape, db));
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_conv(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        gy: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let (bsz, cin, h, wd) = self.value(x).dims4();
        let (cout, _, k, _) = self.value(w).dims4();
        let g = ConvGeom::new(cin, h, wd, k, stride, pad);
        let (rows, cols) = (g.col_rows(), g.col_cols());
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let want_x = self.needs_grad(x);
        let want_w = self.needs_grad(w);
        let mut dw = vec![T::zero(); if want_w { cout * rows } else { 0 }];
        let mut dx = vec![T::zero(); if want_x { bsz * cin * h * wd } else { 0 }];
        let gs = group_size(bsz, rows * cols);
        let mut col = vec![T::zero(); rows * cols * gs];
        let mut gyg = vec![T::zero(); cout * cols * gs];
        let plane = cin * h * wd;
        for s0 in (0..bsz).step_by(gs) {
            let n = gs.min(bsz - s0);
            let ld = n * cols;
            // gather gy into [Cout, n * cols]
            for j in 0..n {
                let gys = &gy.data()[(s0 + j) * cout * cols..(s0 + j + 1) * cout * cols];
                for oc in 0..cout {
                    gyg[oc * ld + j * cols..oc * ld + (j + 1) * cols].copy_from_slice(&gys[oc * cols..(oc + 1) * cols]);
                }
            }
            if want_w {
                for j in 0..n {
                    let xin = &xs[(s0 + j) * plane..(s0 + j + 1) * plane];
                    kernels::im2col(xin, &g, &mut col[j * cols..], ld);
                }
                T::gemm(false, true, cout, rows, ld, T::one(), &gyg[..cout * ld], &col[..rows * ld], T::one(), &mut dw);
            }
            if want_x {
                T::gemm(true, false, rows, ld, cout, T::one(), ws, &gyg[..cout * ld], T::zero(), &mut col[..rows * ld]);
                for j in 0..n {
                    let dxs = &mut dx[(s0 + j) * plane..(s0 + j + 1) * plane];
                    kernels::col2im(&col[j * cols..], &g, dxs, ld);
                }
            }
        }
        if want_x {
            self.accum(grads, x, Tensor::new(&[bsz, cin, h, wd], dx));
        }
        if want_w {
            let shape = self.value(w).shape().to_vec();
            self.accum(grads, w, Tensor::new(&shape, dw));
        }
        if let Some(bv) = b {
            let mut db = vec![T::zero(); cout];
            for (i, plane) in gy.data().chunks(cols).enumerate() {
                db[i % cout] += plane.iter().fold(T::zero(), |a, &v| a + v);
            }
            self.accum(grads, bv, Tensor::new(&[cout], db));
        }
    }
}

/// Samples per im2col batch, keeping the column buffer cache-sized.
fn group_size(bsz: usize, per_sample: usize) -> usize {
    (65_536 / per_sample.max(1)).clamp(1, bsz.max(1))
}

/// Elementwise logistic function, shared with callers that need probabilities.
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    sigmoid(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of d(sum(w . f(x)))/dx for a graph builder.
    fn check<F>(inputs: &[Tensor<f64>], build: F)
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Var,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eval = |xs: &[Tensor<f64>], probe: &Tensor<f64>| -> f64 {
            let mut g = Graph::new();
            let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone())).collect();
            let out = build(&mut g, &vars);
            g.value(out).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &vars);
        let probe = Tensor::<f64>::randn(g.value(out).shape(), 1.0, &mut rng);
        let grads = g.backward_with(out, probe.clone());
        let h = 1e-6;
        for (i, x) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
            for j in 0..x.len() {
                let mut plus = inputs.to_vec();
                plus[i].data_mut()[j] += h;
                let mut minus = inputs.to_vec();
                minus[i].data_mut()[j] -= h;
                let fd = (eval(&plus, &probe) - eval(&minus, &probe)) / (2.0 * h);
                let an = analytic.data()[j];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "input {i} elem {j}: finite diff {fd} vs analytic {an}"
                );
            }
        }
    }

    fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn elementwise_ops() {
        let a = rand(&[2, 3], 1);
        let b = rand(&[2, 3], 2);
        check(&[a.clone(), b.clone()], |g, v| {
            let s = g.add(v[0], v[1]);
            let d = g.sub(s, v[1]);
            let m = g.mul(d, v[1]);
            let t = g.tanh(m);
            let e = g.exp(t);
            let si = g.silu(e);
            g.scale(si, -1.5)
        });
    }

    #[test]
    fn matmul_all_transposes() {
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let a = rand(if ta { &[4, 3] } else { &[3, 4] }, 5);
            let b = rand(if tb { &[2, 4] } else { &[4, 2] }, 6);
            check(&[a, b], move |g, v| g.matmul_t(v[0], v[1], ta, tb));
        }
    }

    #[test]
    fn linear_and_transpose_and_reshape() {
        let x = rand(&[3, 4], 7);
        let w = rand(&[5, 4], 8);
        let b = rand(&[5], 9);
        check(&[x, w, b], |g, v| {
            let y = g.linear(v[0], v[1], Some(v[2]));
            let t = g.transpose(y);
            g.reshape(t, &[15])
        });
    }

    #[test]
    fn conv_variants() {
        for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (2, 2, 0)] {
            let x = rand(&[2, 3, 6, 6], 10);
            let w = rand(&[4, 3, k, k], 11);
            let b = rand(&[4], 12);
            check(&[x, w, b], move |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad));
        }
    }

    #[test]
    fn spatial_ops() {
        let x = rand(&[2, 3, 4, 4], 13);
        let bias = rand(&[2, 3], 14);
        let y = rand(&[2, 2, 4, 4], 15);
        check(&[x, bias, y], |g, v| {
            let a = g.add_channel(v[0], v[1]);
            let c = g.concat_channels(a, v[2]);
            let p = g.avg_pool2(c);
            let u = g.upsample2(p);
            let u = g.mul(u, c);
            g.global_avg_pool(u)
        });
    }

    #[test]
    fn reductions_and_normalize() {
        let x = rand(&[3, 5], 16);
        let s = rand(&[1], 17);
        check(&[x.clone(), s], |g, v| {
            let n = g.l2_normalize_rows(v[0], 1e-12);
            let m = g.mul_scalar_var(n, v[1]);
            let a = g.sum_all(m);
            let b = g.mean_all(m);
            g.add(a, b)
        });
    }

    #[test]
    fn losses() {
        let z = rand(&[3, 4], 18);
        check(std::slice::from_ref(&z), |g, v| g.softmax_cross_entropy(v[0], &[0, 3, 1]));
        let y = Tensor::<f64>::from_f64(&[3, 4], &[1., 0., 0., 1., 0., 0., 1., 1., 1., 1., 0., 0.]);
        check(std::slice::from_ref(&z), |g, v| g.bce_with_logits(v[0], y.clone(), None));
        check(&[z], |g, v| g.bce_with_logits(v[0], y.clone(), Some(vec![2.0, 1.0, 0.5, 3.0])));
    }

    #[test]
    fn bce_is_stable_for_large_logits() {
        let mut g = Graph::<f32>::new();
        let z = g.leaf(Tensor::new(&[1, 2], vec![80.0, -80.0]));
        let l = g.bce_with_logits(z, Tensor::new(&[1, 2], vec![1.0, 0.0]), None);
        assert!(g.value(l).data()[0].abs() < 1e-6);
        let gr = g.backward(l);
        assert!(gr.get(z).unwrap().all_finite());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Tensor::full(&[2], 3.0));
        let x = g.leaf(Tensor::full(&[2], 2.0));
        let m = g.mul(c, x);
        let s = g.sum_all(m);
        let gr = g.backward(s);
        assert!(gr.get(c).is_none());
        assert_eq!(gr.get(x).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn gradient_accumulates_over_reuse() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(&[1], 2.0));
        let y = g.mul(x, x);
        let z = g.add(y, x);
        let gr = g.backward(z);
        assert_eq!(gr.get(x).unwrap().data(), &[5.0]);
    }
}
