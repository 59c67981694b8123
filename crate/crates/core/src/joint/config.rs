use serde::{Deserialize, Serialize};

use crate::diff::AdamConfig;
use crate::encoders::{EegChannelNetConfig, ImageEncoderConfig};
use crate::error::{Error, Result};
use crate::signal::{FrequencyBand, TimeWindow};

/// Labels of the image classifier that initializes joint training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainLabels {
    #[default]
    Class,
    /// One label per (class, variant) of the planted truth.
    ClassVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning rate multiplier applied once per epoch after the first.
    pub lr_decay: f64,
    pub seed: u64,
    pub band: Option<FrequencyBand>,
    pub window: Option<TimeWindow>,
    /// Overrides the embedding size of both encoders when set.
    pub embedding_dim: Option<usize>,
    pub eeg: EegChannelNetConfig,
    pub image: ImageEncoderConfig,
    /// Triplets drawn per joint-training epoch; defaults to the number of
    /// training segments.
    pub triplets_per_epoch: Option<usize>,
    /// Size of the fixed validation and test triplet sets.
    pub eval_triplets: usize,
    /// When nonzero, joint training starts the EEG encoder from an EEG
    /// classifier trained for this many epochs on the train split.
    pub eeg_pretrain_epochs: usize,
    /// When nonzero, joint training starts the image encoder from an image
    /// classifier trained for this many epochs on the train split.
    pub image_pretrain_epochs: usize,
    pub image_pretrain_labels: PretrainLabels,
    /// Probability that the negative image of a joint training triplet has a
    /// random square zeroed as in occlusion saliency. The side is uniform
    /// between 3 pixels and the full image.
    pub negative_occlusion: f64,
    /// Number of leading pretrained convolutional stages kept fixed. When
    /// nonzero the image encoder also normalizes with its stored statistics
    /// throughout joint training.
    pub frozen_image_stages: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch: 16,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_decay: 1.0,
            seed: 0,
            band: None,
            window: None,
            embedding_dim: None,
            eeg: EegChannelNetConfig::default(),
            image: ImageEncoderConfig::default(),
            triplets_per_epoch: None,
            eval_triplets: 1000,
            eeg_pretrain_epochs: 0,
            image_pretrain_epochs: 0,
            image_pretrain_labels: PretrainLabels::Class,
            negative_occlusion: 0.0,
            frozen_image_stages: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::Config("batch must be at least 2 (batch normalization)".into()));
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("need lr >= 0, betas in [0, 1) and eps > 0".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must lie in (0, 1]".into()));
        }
        if self.embedding_dim == Some(0) || self.eval_triplets == 0 {
            return Err(Error::Config("embedding_dim and eval_triplets must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.negative_occlusion) {
            return Err(Error::Config("negative_occlusion must lie in [0, 1]".into()));
        }
        if self.frozen_image_stages > 0 && self.image_pretrain_epochs == 0 {
            return Err(Error::Config("frozen_image_stages needs image_pretrain_epochs > 0".into()));
        }
        if self.frozen_image_stages > self.image_config().widths.len() {
            return Err(Error::Config("frozen_image_stages exceeds the number of image stages".into()));
        }
        if let Some(w) = &self.window {
            w.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.eeg_config().validate()?;
        self.image_config().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    pub fn eeg_config(&self) -> EegChannelNetConfig {
        let mut c = self.eeg.clone();
        if let Some(d) = self.embedding_dim {
            c.embedding_dim = d;
        }
        c
    }

    pub fn image_config(&self) -> ImageEncoderConfig {
        let mut c = self.image.clone();
        if let Some(d) = self.embedding_dim {
            c.embedding_dim = d;
        }
        c
    }
}
