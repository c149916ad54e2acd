//! Contrastive image-text loss, image-to-class-prompt loss and their blend.

use daug_nn::{Graph, Real, Tensor, Var};

use crate::{Error, Result};

/// Fixed logit scale of the image-to-class term.
pub const I2C_LOGIT_SCALE: f64 = 10.0;

/// Symmetric InfoNCE over `exp(logit_scale) * I R^T`; row `i` of each side
/// is the positive for row `i` of the other.
pub fn clip_loss_graph<T: Real>(g: &mut Graph<T>, images: Var, texts: Var, logit_scale: Var) -> Var {
    let n = g.shape(images)[0];
    let sim = g.matmul_t(images, texts, false, true);
    let scale = g.exp(logit_scale);
    let logits = g.mul_scalar_var(sim, scale);
    let targets: Vec<usize> = (0..n).collect();
    let i2t = g.softmax_cross_entropy(logits, &targets);
    let lt = g.transpose(logits);
    let t2i = g.softmax_cross_entropy(lt, &targets);
    let both = g.add(i2t, t2i);
    g.scale(both, 0.5)
}

/// Mean BCE of `sigmoid(kappa * I C^T)` against multi-hot `labels [N, K]`.
pub fn i2c_loss_graph<T: Real>(g: &mut Graph<T>, images: Var, classes: Var, labels: Tensor<T>, kappa: f64) -> Var {
    let sim = g.matmul_t(images, classes, false, true);
    let logits = g.scale(sim, kappa);
    g.bce_with_logits(logits, labels, None)
}

/// `w * clip + (1 - w) * i2c`; a term with zero weight is not built at all.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_loss_graph<T: Real>(
    g: &mut Graph<T>,
    images: Var,
    texts: Var,
    classes: Var,
    labels: &Tensor<T>,
    logit_scale: Var,
    w: f64,
    kappa: f64,
) -> Var {
    let clip = (w > 0.0).then(|| {
        let l = clip_loss_graph(g, images, texts, logit_scale);
        g.scale(l, w)
    });
    let i2c = (w < 1.0).then(|| {
        let l = i2c_loss_graph(g, images, classes, labels.clone(), kappa);
        g.scale(l, 1.0 - w)
    });
    match (clip, i2c) {
        (Some(a), Some(b)) => g.add(a, b),
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => unreachable!("w is either positive or below one"),
    }
}

fn check_rows(what: &str, a: &Tensor<f64>, b: &Tensor<f64>) -> Result<()> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1] {
        return Err(Error::Argument(format!("{what}: embedding shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// CLIP loss of fixed embeddings at a given temperature.
pub fn clip_loss(images: &Tensor<f64>, texts: &Tensor<f64>, temperature: f64) -> Result<f64> {
    check_rows("clip_loss", images, texts)?;
    let n = images.shape()[0];
    if n < 2 || texts.shape()[0] != n {
        return Err(Error::Argument(format!(
            "clip_loss needs two equal batches of at least 2, got {n} and {}",
            texts.shape()[0]
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::Argument(format!("temperature must be positive, got {temperature}")));
    }
    let mut g = Graph::new();
    let i = g.constant(images.clone());
    let r = g.constant(texts.clone());
    let s = g.constant(Tensor::scalar(-temperature.ln()));
    let l = clip_loss_graph(&mut g, i, r, s);
    Ok(g.value(l).data()[0])
}

/// Image-to-class loss of fixed embeddings; `labels` holds one multi-hot row per image.
pub fn i2c_loss<L: AsRef<[u8]>>(images: &Tensor<f64>, classes: &Tensor<f64>, labels: &[L], kappa: f64) -> Result<f64> {
    check_rows("i2c_loss", images, classes)?;
    let (n, k) = (images.shape()[0], classes.shape()[0]);
    if labels.len() != n || labels.iter().any(|l| l.as_ref().len() != k) {
        return Err(Error::Argument(format!("i2c_loss needs {n} label rows of length {k}")));
    }
    let y: Vec<f64> = labels.iter().flat_map(|l| l.as_ref().iter().map(|&v| v as f64)).collect();
    let mut g = Graph::new();
    let i = g.constant(images.clone());
    let c = g.constant(classes.clone());
    let l = i2c_loss_graph(&mut g, i, c, Tensor::new(&[n, k], y), kappa);
    Ok(g.value(l).data()[0])
}

pub fn hybrid_loss(clip: f64, i2c: f64, w: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Argument(format!("loss weight w must lie in [0, 1], got {w}")));
    }
    Ok(if w == 1.0 {
        clip
    } else if w == 0.0 {
        i2c
    } else {
        w * clip + (1.0 - w) * i2c
    })
}
