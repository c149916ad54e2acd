//! Dual image/text encoder trained with the image-text-class hybrid loss,
//! plus the prompt-derived classification head and cosine retrieval.

mod encoder;
mod head;
mod loss;
mod text;
mod train;

pub use encoder::{DualEncoder, EncoderConfig, INIT_LOGIT_SCALE, MAX_LOGIT_SCALE};
pub use head::{build_linear_head, cosine_scores, i2c_probs, rank_by_score, retrieve, ClassPromptSet, LinearHead};
pub use loss::{clip_loss, clip_loss_graph, hybrid_loss, hybrid_loss_graph, i2c_loss, i2c_loss_graph, I2C_LOGIT_SCALE};
pub use text::{class_prompt, class_prompts, EncodedTexts, Vocabulary};
pub use train::{encoder_inputs, train_hybrid, HeatmapSource, HybridReport, HybridTrainConfig};

#[cfg(test)]
mod tests;
