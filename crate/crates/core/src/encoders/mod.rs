//! The EEG-ChannelNet encoder, a compact image encoder with a registry of
//! suppressible feature maps, and linear classification heads.

mod common;
mod eeg;
mod head;
mod image;
mod model;

pub use common::{eeg_batch, image_batch, ForwardCtx};
pub use eeg::{EegChannelNet, EegChannelNetConfig, EegShapes};
pub use head::{argmax, softmax_rows, LinearHead};
pub use image::{ImageEncoder, ImageEncoderConfig, RegistryLayer, Suppression};
pub use model::{
    load_model, save_model, Architecture, EegClassifier, ImageClassifier, JointModel, EEG_PREFIX, EVAL_CHUNK,
    HEAD_PREFIX, IMAGE_PREFIX,
};
