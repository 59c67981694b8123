//! Synthetic paired EEG/image data with planted ground truth: per-class
//! high-gamma signatures on a set of active channels, per-class textured
//! patches at a known location, and split management.

mod config;
mod dataset;
mod generate;
mod manifest;

pub use config::GeneratorConfig;
pub use dataset::{Dataset, Sample};
pub use generate::{
    build_manifest, generate, image_name, plant_truth, render_image, render_segment, segment_name, ClassTruth,
    ImageTruth, PlantedTruth, Rect, SegmentTruth, SignatureComponent, VariantTruth, CONFIG_FILE, DEFAULT_SPLIT,
    MANIFEST_FILE, SIGNATURE_BAND, TRUTH_FILE,
};
pub use manifest::{exclude_class, split, DatasetManifest, ManifestRow, Split};
