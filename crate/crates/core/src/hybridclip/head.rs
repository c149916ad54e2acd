//! Class prompts as classifier weights, and cosine retrieval.

use std::cmp::Ordering;

use daug_nn::{sigmoid_scalar, Tensor};

use super::encoder::DualEncoder;
use super::text::class_prompts;
use crate::{Error, Result};

/// The 14 class prompts and their embeddings, tagged with the encoder
/// version they were computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPromptSet {
    prompts: Vec<String>,
    embeddings: Option<(u64, Tensor<f32>)>,
}

impl Default for ClassPromptSet {
    fn default() -> Self {
        Self { prompts: class_prompts(), embeddings: None }
    }
}

impl ClassPromptSet {
    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn is_stale(&self, encoder: &DualEncoder) -> bool {
        !matches!(&self.embeddings, Some((v, _)) if *v == encoder.version())
    }

    /// Re-encode the prompts with the encoder's current weights.
    pub fn refresh(&mut self, encoder: &DualEncoder) -> Result<()> {
        let texts: Vec<&str> = self.prompts.iter().map(String::as_str).collect();
        self.embeddings = Some((encoder.version(), encoder.embed_texts(&texts)?));
        Ok(())
    }

    /// `[14, d]` prompt embeddings; errors if the encoder changed since the last refresh.
    pub fn embeddings(&self, encoder: &DualEncoder) -> Result<&Tensor<f32>> {
        match &self.embeddings {
            Some((v, e)) if *v == encoder.version() => Ok(e),
            other => Err(Error::StalePrompts { encoded: other.as_ref().map(|(v, _)| *v), current: encoder.version() }),
        }
    }
}

/// Cosine similarity of `query` to every row of `gallery [N, d]`, in f64.
pub fn cosine_scores(query: &[f32], gallery: &Tensor<f32>) -> Vec<f64> {
    let d = query.len();
    assert_eq!(gallery.shape().get(1), Some(&d), "query and gallery dimensions differ");
    let norm = |v: &[f32]| v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let qn = norm(query);
    gallery
        .data()
        .chunks(d)
        .map(|row| {
            let dot: f64 = row.iter().zip(query).map(|(&a, &b)| a as f64 * b as f64).sum();
            let n = qn * norm(row);
            if n > 0.0 {
                dot / n
            } else {
                0.0
            }
        })
        .collect()
}

/// Per-class probabilities `sigmoid(kappa * cos(I, C_j))` for each image row.
pub fn i2c_probs(images: &Tensor<f32>, classes: &Tensor<f32>, kappa: f64) -> Vec<Vec<f64>> {
    let d = classes.shape()[1];
    images.data().chunks(d).map(|row| cosine_scores(row, classes).into_iter().map(|s| sigmoid_scalar(kappa * s)).collect()).collect()
}

/// Linear layer whose weights are the prompt embeddings and whose bias is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    weights: Tensor<f32>,
    kappa: f64,
}

pub fn build_linear_head(prompts: &ClassPromptSet, encoder: &DualEncoder, kappa: f64) -> Result<LinearHead> {
    Ok(LinearHead { weights: prompts.embeddings(encoder)?.clone(), kappa })
}

impl LinearHead {
    pub fn weights(&self) -> &Tensor<f32> {
        &self.weights
    }

    /// Class probabilities for image embeddings `[B, d]`.
    pub fn classify(&self, image_emb: &Tensor<f32>) -> Vec<Vec<f64>> {
        i2c_probs(image_emb, &self.weights, self.kappa)
    }
}

/// Top-`k` gallery positions by cosine similarity; ties go to the smaller id.
pub fn retrieve<S: AsRef<str>>(query: &[f32], gallery: &Tensor<f32>, ids: &[S], k: usize) -> Result<Vec<usize>> {
    let n = gallery.shape()[0];
    if n == 0 {
        return Err(Error::Argument("retrieval gallery is empty".into()));
    }
    if ids.len() != n {
        return Err(Error::Argument(format!("{} ids for a gallery of {n}", ids.len())));
    }
    if k > n {
        return Err(Error::Argument(format!("k = {k} exceeds gallery size {n}")));
    }
    let scores = cosine_scores(query, gallery);
    Ok(rank_by_score(&scores, ids, k))
}

/// Positions of the `k` highest scores, descending, ties by ascending id.
pub fn rank_by_score<S: AsRef<str>>(scores: &[f64], ids: &[S], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then_with(|| ids[a].as_ref().cmp(ids[b].as_ref()))
    });
    order.truncate(k);
    order
}
