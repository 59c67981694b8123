//! EEG preprocessing: IIR filtering, trimming, z-scoring, band and window
//! restriction, Welch spectra and the filtered noise used to replace channels.

mod filter;
mod format;
mod noise;
mod psd;
mod segment;

pub use filter::{design_filter, Biquad, FilterKind, FilterPhase, FilterSpec, NOTCH_BANDWIDTH_HZ};
pub use format::{decode_eegb, encode_eegb, read_eegb, write_eegb, EEGB_MAGIC};
pub use noise::{filtered_gaussian_noise, REPLACEMENT_CUTOFF_HZ};
pub use psd::{psd, welch, Spectrum};
pub use segment::{
    ablation_bands, ablation_windows, apply_filter, apply_filter_with, default_channel_names, mean_var,
    preprocess, restrict, trim, zscore, ChannelStats, EegSegment, FrequencyBand, PrepConfig, TimeWindow,
    TRIMMED_END_MS, TRIMMED_ONSET_MS,
};
