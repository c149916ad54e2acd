//! Diffusion-based feature augmentation (DAug) with an image-text-class
//! hybrid contrastive dual encoder, on a synthetic chest X-ray benchmark.

pub mod classifier;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod heatmap;
pub mod hybridclip;
pub mod imaging;
pub mod pipeline;
pub mod seeding;
pub mod synthdata;
pub mod taxonomy;

pub use error::{Error, Result};
pub use imaging::{Image, Mask};
pub use taxonomy::{to_superclass, ClassTaxonomy, NUM_FINE, NUM_SUPER};
