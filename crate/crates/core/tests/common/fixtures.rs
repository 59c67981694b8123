//! Small models and inputs shared by the integration tests, plus the weight
//! surgery that makes a model provably ignore an EEG channel or an image
//! feature map.

use neurovis::datagen::{Dataset, GeneratorConfig};
use neurovis::diff::ParamStore;
use neurovis::encoders::{EegChannelNetConfig, ImageEncoderConfig, JointModel};
use neurovis::image::Image;
use neurovis::joint::TrainConfig;
use neurovis::signal::{filtered_gaussian_noise, EegSegment, PrepConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CHANNELS: usize = 8;
pub const SAMPLES: usize = 64;
pub const SIDE: usize = 16;

pub fn tiny_joint() -> (JointModel, ParamStore) {
    let eeg = EegChannelNetConfig {
        channels: CHANNELS,
        temporal_dilations: vec![1, 2, 4],
        temporal_kernel: 5,
        temporal_stride: 2,
        temporal_maps: 2,
        spatial_kernels: vec![8, 4, 3],
        spatial_stride: 2,
        spatial_maps: 2,
        residual_layers: 1,
        final_maps: 2,
        embedding_dim: 6,
        ..Default::default()
    };
    let image = ImageEncoderConfig { width: SIDE, height: SIDE, widths: vec![3, 4], embedding_dim: 6, ..Default::default() };
    let model = JointModel::new(eeg, SAMPLES, image).unwrap();
    let params = model.init(5).unwrap();
    (model, params)
}

/// Synthetic dataset with few channels and small images.
pub fn small_dataset(classes: usize, per_class: usize, seed: u64) -> Dataset {
    let cfg = GeneratorConfig {
        n_classes: classes,
        segments_per_class: per_class,
        n_subjects: 1,
        channels: 8,
        image_width: SIDE,
        image_height: SIDE,
        active_channels_per_class: 2,
        seed,
        ..Default::default()
    };
    Dataset::synthesize(&cfg, &PrepConfig::default()).unwrap()
}

/// Training config with networks sized for [`small_dataset`].
pub fn small_train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch: 4,
        seed: 11,
        eval_triplets: 50,
        eeg: EegChannelNetConfig {
            temporal_dilations: vec![1, 2],
            temporal_kernel: 5,
            temporal_stride: 4,
            temporal_maps: 2,
            spatial_kernels: vec![8, 4],
            spatial_maps: 2,
            residual_layers: 1,
            final_maps: 2,
            embedding_dim: 6,
            ..Default::default()
        },
        image: ImageEncoderConfig { width: SIDE, height: SIDE, widths: vec![3, 4], embedding_dim: 6, ..Default::default() },
        ..Default::default()
    }
}

pub fn random_segment(channels: usize, samples: usize, seed: u64) -> EegSegment {
    let data = filtered_gaussian_noise(0.0, 1.0, channels * samples, 1000.0, 200.0, seed).unwrap();
    EegSegment::new(channels, samples, 1000.0, data).unwrap()
}

pub fn random_image(side: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..3 * side * side).map(|_| rng.gen_range(0.0..1.0)).collect();
    Image::new(side, side, data).unwrap()
}

/// Zeroes every spatial tap that can read channel row `channel`. The temporal
/// block filters rows independently and the spatial block is the only mixing
/// across rows, so afterwards the EEG embedding does not depend on that row.
/// Rows of the same parity (under the channel stride) are dropped as well.
pub fn ignore_channel(model: &JointModel, params: &mut ParamStore, channel: usize) {
    let cfg = &model.eeg.config;
    let shapes = model.eeg.shapes(model.eeg.samples).unwrap();
    let s = cfg.spatial_stride;
    for (b, &k) in cfg.spatial_kernels.iter().enumerate() {
        let pad = shapes.spatial_padding[b];
        let w = params.get_mut(&format!("{}.spatial.{b}.w", model.eeg.prefix)).unwrap();
        let per_tap = k;
        let outer = w.len() / per_tap;
        for o in 0..outer {
            for j in 0..k {
                // output row i reads input row i*s - pad + j
                if (channel + pad) % s == j % s {
                    w.data_mut()[o * per_tap + j] = 0.0;
                }
            }
        }
    }
}

/// Cuts every outgoing weight of feature `feature` of image layer `layer`.
pub fn kill_feature(model: &JointModel, params: &mut ParamStore, layer: usize, feature: usize) {
    let widths = &model.image.config.widths;
    let p = &model.image.prefix;
    if layer + 1 < widths.len() {
        let (cout, cin) = (widths[layer + 1], widths[layer]);
        let w = params.get_mut(&format!("{p}.stage{}.w", layer + 1)).unwrap();
        for o in 0..cout {
            w.data_mut()[(o * cin + feature) * 9..(o * cin + feature + 1) * 9].fill(0.0);
        }
    } else {
        let cin = widths[layer];
        let w = params.get_mut(&format!("{p}.fc.w")).unwrap();
        let rows = w.len() / cin;
        for r in 0..rows {
            w.data_mut()[r * cin + feature] = 0.0;
        }
    }
}
