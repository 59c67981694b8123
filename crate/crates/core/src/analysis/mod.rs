//! Compatibility-based differential analyses: multiscale occlusion
//! saliency, channel importance by noise replacement, feature/channel
//! association by feature suppression, plus scalp-map rendering and
//! saliency metrics.

mod importance;
mod io;
mod metrics;
mod saliency;
mod scalp;

pub use importance::{
    association, association_from_shifts, association_global, association_layer, channel_importance,
    global_channel_importance, replace_channel, replacement_seed, replacement_shifts, suppressed_embeddings,
    AssociationMatrix, ChannelImportanceMap, ChannelShifts, ImportanceConfig,
};
pub use io::{grid_csv, labeled_csv, write_saliency, write_text};
pub use metrics::{auc, cc, nss, saliency_metrics, shuffled_auc, Fixation, SaliencyMetrics};
pub use saliency::{
    classifier_saliency, combine_scales, mask_patch, occlusion_map, saliency, saliency_scale, SaliencyMap,
    SaliencyOptions, ScaleMap, DEFAULT_SCALES,
};
pub use scalp::{
    electrode_pixel, gaussian_kernel, render_scalp_map, Electrode, ScalpLayout, ScalpMap, SCALP_SIGMA, SCALP_SIZE,
};
