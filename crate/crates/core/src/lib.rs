//! Joint EEG/image embedding learning with a margin-free compatibility triplet
//! objective, the EEG-ChannelNet encoder, and compatibility-based differential
//! analyses (occlusion saliency, channel importance, feature/channel
//! association), together with a synthetic paired dataset generator that
//! plants recoverable ground truth.

pub mod analysis;
pub mod cli;
pub mod datagen;
pub mod diff;
pub mod encoders;
pub mod error;
pub mod image;
pub mod joint;
pub mod par;
pub mod rng;
pub mod signal;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
