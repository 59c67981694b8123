//! Joint training of the EEG and image encoders under the margin-free
//! compatibility triplet loss, EEG/image classifiers, and linear probes on
//! frozen embeddings.

mod config;
mod train;
mod triplet;

pub use config::{PretrainLabels, TrainConfig};
pub use train::{
    embed_classify, evaluation_triplets, image_labels, ranking_accuracy, train_eeg_classifier, train_image_classifier, train_joint,
    EmbedClassifier, EpochRecord, Modality, TrainReport, TrainedEegClassifier,
    TrainedImageClassifier, TrainedJoint,
};
pub use triplet::{compatibility, sample_triplets, triplet_loss, triplet_loss_value, Triplet};
