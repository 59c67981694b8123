use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_classes: usize,
    /// Images per class; every image is recorded once per subject.
    pub segments_per_class: usize,
    pub n_subjects: usize,
    pub channels: usize,
    pub samples: usize,
    pub sample_rate: f64,
    pub image_width: usize,
    pub image_height: usize,
    /// RMS ratio of the planted sinusoids to the background noise on an
    /// active channel.
    pub snr: f64,
    pub active_channels_per_class: usize,
    /// Instance variants per class. A variant fixes both the stripe
    /// orientation of the image patch and the signature frequency of the EEG,
    /// so matched pairs are distinguishable from same-class mismatches.
    pub n_variants: usize,
    /// Samples before stimulus onset that carry no class signal.
    pub onset_samples: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_classes: 40,
            segments_per_class: 50,
            n_subjects: 6,
            channels: 128,
            samples: 500,
            sample_rate: 1000.0,
            image_width: 64,
            image_height: 64,
            snr: 1.0,
            active_channels_per_class: 12,
            n_variants: 4,
            onset_samples: 20,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_classes", self.n_classes),
            ("segments_per_class", self.segments_per_class),
            ("n_subjects", self.n_subjects),
            ("channels", self.channels),
            ("samples", self.samples),
            ("image_width", self.image_width),
            ("image_height", self.image_height),
            ("active_channels_per_class", self.active_channels_per_class),
            ("n_variants", self.n_variants),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return Err(Error::Config(format!("snr must be positive, got {}", self.snr)));
        }
        if self.active_channels_per_class > self.channels {
            return Err(Error::Config("more active channels than channels".into()));
        }
        if !(self.sample_rate > 2.0 * 95.0) {
            return Err(Error::Config("sample rate must exceed 190 Hz to carry high-gamma signatures".into()));
        }
        if self.onset_samples >= self.samples {
            return Err(Error::Config("onset_samples must be shorter than the segment".into()));
        }
        if self.image_width < 8 || self.image_height < 8 {
            return Err(Error::Config("images must be at least 8x8".into()));
        }
        Ok(())
    }

    pub fn n_images(&self) -> usize {
        self.n_classes * self.segments_per_class
    }

    pub fn n_segments(&self) -> usize {
        self.n_images() * self.n_subjects
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
