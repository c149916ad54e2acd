//! Closed-vocabulary tokenisation of reports and class prompts.

use daug_nn::Tensor;

use crate::taxonomy::{FINE_CLASSES, NUM_FINE};
use crate::{Error, Result};

/// Words of the report and prompt templates.
const TEMPLATE_WORDS: &[&str] =
    &["a", "photo", "of", "chest", "x", "ray", "image", "with", "no", "is", "present", "acute", "findings"];

/// Fixed word list; index 0 is reserved for unknown words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut words: Vec<String> = vec!["<unk>".into()];
        let class_words = FINE_CLASSES.iter().flat_map(|c| c.split_whitespace());
        for w in TEMPLATE_WORDS.iter().copied().chain(class_words) {
            let w = w.to_lowercase();
            if !words.contains(&w) {
                words.push(w);
            }
        }
        Self { words }
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.words.iter().position(|w| w == word).unwrap_or(0)
    }

    pub fn tokenize(&self, sentence: &str) -> Vec<usize> {
        sentence
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(|w| self.id(&w.to_lowercase()))
            .collect()
    }

    /// Bag-of-words count vector per sentence of `text`.
    pub fn encode(&self, text: &str) -> Result<Vec<Vec<f32>>> {
        let sentences: Vec<Vec<f32>> = text
            .split('.')
            .map(|s| self.tokenize(s))
            .filter(|t| !t.is_empty())
            .map(|toks| {
                let mut v = vec![0.0; self.len()];
                toks.iter().for_each(|&i| v[i] += 1.0);
                v
            })
            .collect();
        if sentences.is_empty() {
            return Err(Error::Argument("cannot embed empty text".into()));
        }
        Ok(sentences)
    }
}

/// Sentence bags of a batch of texts, stacked, plus the `[B, S]` matrix that
/// averages each text's sentences.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTexts {
    pub bags: Tensor<f32>,
    pub pool: Tensor<f32>,
}

impl EncodedTexts {
    pub fn new(vocab: &Vocabulary, texts: &[&str]) -> Result<Self> {
        let per: Vec<Vec<Vec<f32>>> = texts.iter().map(|t| vocab.encode(t)).collect::<Result<_>>()?;
        Ok(Self::from_sentences(vocab.len(), &per.iter().collect::<Vec<_>>()))
    }

    pub(crate) fn from_sentences(v: usize, per: &[&Vec<Vec<f32>>]) -> Self {
        let total: usize = per.iter().map(|s| s.len()).sum();
        let mut bags = Vec::with_capacity(total * v);
        let mut pool = vec![0.0; per.len() * total];
        let mut row = 0;
        for (b, sents) in per.iter().enumerate() {
            for s in sents.iter() {
                bags.extend_from_slice(s);
                pool[b * total + row] = 1.0 / sents.len() as f32;
                row += 1;
            }
        }
        Self { bags: Tensor::new(&[total, v], bags), pool: Tensor::new(&[per.len(), total], pool) }
    }
}

pub fn class_prompt(class: &str) -> String {
    format!("A photo of a Chest X-ray image with {}.", class.to_lowercase())
}

pub fn class_prompts() -> Vec<String> {
    FINE_CLASSES.iter().map(|c| class_prompt(c)).collect::<Vec<_>>()[..NUM_FINE].to_vec()
}
