use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::filter::{design_filter, FilterKind, FilterPhase, FilterSpec};

/// Per-channel mean and population variance recorded by [`zscore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// One multichannel EEG recording, stored channel-major (`C x L`).
#[derive(Debug, Clone, PartialEq)]
pub struct EegSegment {
    pub channels: usize,
    pub samples: usize,
    pub sample_rate: f64,
    pub data: Vec<f64>,
    pub channel_names: Vec<String>,
    pub class_label: Option<usize>,
    pub image_id: Option<String>,
    pub subject_id: Option<usize>,
    pub stats: Option<ChannelStats>,
}

impl EegSegment {
    pub fn new(channels: usize, samples: usize, sample_rate: f64, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || samples == 0 {
            return Err(Error::Signal("segment needs at least one channel and one sample".into()));
        }
        if data.len() != channels * samples {
            return Err(Error::Signal(format!(
                "{channels}x{samples} segment given {} values",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            samples,
            sample_rate,
            data,
            channel_names: default_channel_names(channels),
            class_label: None,
            image_id: None,
            subject_id: None,
            stats: None,
        })
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.samples..(c + 1) * self.samples]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.samples..(c + 1) * self.samples]
    }

    /// Same metadata, new sample matrix.
    fn with_data(&self, samples: usize, data: Vec<f64>) -> Self {
        Self { samples, data, stats: None, channel_names: self.channel_names.clone(), ..self.clone_meta() }
    }

    fn clone_meta(&self) -> Self {
        Self {
            channels: self.channels,
            samples: self.samples,
            sample_rate: self.sample_rate,
            data: Vec::new(),
            channel_names: Vec::new(),
            class_label: self.class_label,
            image_id: self.image_id.clone(),
            subject_id: self.subject_id,
            stats: None,
        }
    }
}

pub fn default_channel_names(channels: usize) -> Vec<String> {
    (0..channels).map(|c| format!("E{}", c + 1)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBand {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl FrequencyBand {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), lo, hi }
    }

    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        if !(0.0 < self.lo && self.lo < self.hi && self.hi < sample_rate / 2.0) {
            return Err(Error::Signal(format!(
                "band {} [{}, {}] Hz outside (0, {})",
                self.name,
                self.lo,
                self.hi,
                sample_rate / 2.0
            )));
        }
        Ok(())
    }
}

/// The band list of the frequency ablation, in table order.
pub fn ablation_bands() -> Vec<FrequencyBand> {
    vec![
        FrequencyBand::new("theta_alpha_beta", 5.0, 32.0),
        FrequencyBand::new("low_gamma", 32.0, 45.0),
        FrequencyBand::new("high_gamma", 55.0, 95.0),
        FrequencyBand::new("all_gamma", 32.0, 95.0),
        FrequencyBand::new("all", 5.0, 95.0),
    ]
}

/// Milliseconds relative to stimulus onset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub t0: f64,
    pub t1: f64,
}

/// Onset of the first retained sample after trimming, in ms.
pub const TRIMMED_ONSET_MS: f64 = 20.0;
pub const TRIMMED_END_MS: f64 = 460.0;

impl TimeWindow {
    pub fn new(t0: f64, t1: f64) -> Self {
        Self { t0, t1 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(TRIMMED_ONSET_MS <= self.t0 && self.t0 < self.t1 && self.t1 <= TRIMMED_END_MS) {
            return Err(Error::Signal(format!(
                "window {}-{} ms outside {TRIMMED_ONSET_MS}-{TRIMMED_END_MS} ms",
                self.t0, self.t1
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.t0, self.t1)
    }
}

/// The window list of the temporal ablation, in table order.
pub fn ablation_windows() -> Vec<TimeWindow> {
    [(20.0, 240.0), (20.0, 350.0), (20.0, 460.0), (130.0, 350.0), (130.0, 460.0), (240.0, 460.0)]
        .into_iter()
        .map(|(a, b)| TimeWindow::new(a, b))
        .collect()
}

pub fn apply_filter(segment: &EegSegment, spec: &FilterSpec) -> Result<EegSegment> {
    apply_filter_with(segment, spec, FilterPhase::Causal)
}

pub fn apply_filter_with(segment: &EegSegment, spec: &FilterSpec, phase: FilterPhase) -> Result<EegSegment> {
    if segment.data.iter().any(|v| v.is_nan()) {
        return Err(Error::Signal("NaN in input segment".into()));
    }
    if !spec.is_stable() {
        return Err(Error::FilterDesign("refusing to apply an unstable filter".into()));
    }
    let mut data = Vec::with_capacity(segment.data.len());
    for c in 0..segment.channels {
        data.extend(spec.filter_with(segment.channel(c), phase));
    }
    Ok(segment.with_data(segment.samples, data))
}

/// Keeps samples `[skip, skip + keep)` of every channel.
pub fn trim(segment: &EegSegment, skip: usize, keep: usize) -> Result<EegSegment> {
    if keep == 0 || segment.samples < skip + keep {
        return Err(Error::Signal(format!(
            "segment of {} samples too short to skip {skip} and keep {keep}",
            segment.samples
        )));
    }
    let mut data = Vec::with_capacity(segment.channels * keep);
    for c in 0..segment.channels {
        data.extend_from_slice(&segment.channel(c)[skip..skip + keep]);
    }
    Ok(segment.with_data(keep, data))
}

/// Mean and population variance of a slice.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Per-channel standardization with the population standard deviation.
pub fn zscore(segment: &EegSegment) -> Result<EegSegment> {
    let mut data = Vec::with_capacity(segment.data.len());
    let mut stats = ChannelStats { mean: Vec::with_capacity(segment.channels), var: Vec::with_capacity(segment.channels) };
    for c in 0..segment.channels {
        let x = segment.channel(c);
        let (mean, var) = mean_var(x);
        let std = var.sqrt();
        if !(std > 0.0) || std <= 1e-12 * mean.abs() {
            return Err(Error::Signal(format!("channel {c} is constant; cannot z-score")));
        }
        data.extend(x.iter().map(|v| (v - mean) / std));
        stats.mean.push(mean);
        stats.var.push(var);
    }
    let mut out = segment.with_data(segment.samples, data);
    out.stats = Some(stats);
    Ok(out)
}

/// Band and/or window restriction of a preprocessed (trimmed) segment. A
/// band is applied as an order-2 Butterworth bandpass followed by a fresh
/// z-score; a window selects samples relative to the trimmed onset.
pub fn restrict(
    segment: &EegSegment,
    band: Option<&FrequencyBand>,
    window: Option<&TimeWindow>,
) -> Result<EegSegment> {
    let mut out = segment.clone();
    if let Some(band) = band {
        band.validate(segment.sample_rate)?;
        let spec = design_filter(FilterKind::Bandpass, 2, &[band.lo, band.hi], segment.sample_rate)?;
        out = zscore(&apply_filter(&out, &spec)?)?;
    }
    if let Some(w) = window {
        w.validate()?;
        let per_ms = segment.sample_rate / 1000.0;
        let start = ((w.t0 - TRIMMED_ONSET_MS) * per_ms).round() as usize;
        let end = (((w.t1 - TRIMMED_ONSET_MS) * per_ms).round() as usize).min(out.samples);
        if end <= start {
            return Err(Error::Signal(format!("window {} selects no samples", w.label())));
        }
        let stats = out.stats.take();
        out = trim(&out, start, end - start)?;
        out.stats = stats;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepConfig {
    pub bandpass: [f64; 2],
    pub bandpass_order: usize,
    /// Notch center in Hz; `None` disables the notch.
    pub notch_hz: Option<f64>,
    pub notch_bandwidth_hz: f64,
    pub skip: usize,
    pub keep: usize,
    pub phase: FilterPhase,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            bandpass: [5.0, 95.0],
            bandpass_order: 2,
            notch_hz: Some(50.0),
            notch_bandwidth_hz: super::filter::NOTCH_BANDWIDTH_HZ,
            skip: 20,
            keep: 440,
            phase: FilterPhase::Causal,
        }
    }
}

/// Bandpass, notch, trim, z-score.
pub fn preprocess(segment: &EegSegment, cfg: &PrepConfig) -> Result<EegSegment> {
    let fs = segment.sample_rate;
    let bp = design_filter(FilterKind::Bandpass, cfg.bandpass_order, &cfg.bandpass, fs)?;
    let mut s = apply_filter_with(segment, &bp, cfg.phase)?;
    if let Some(f0) = cfg.notch_hz {
        let notch = design_filter(FilterKind::Notch, 1, &[f0, cfg.notch_bandwidth_hz], fs)?;
        s = apply_filter_with(&s, &notch, cfg.phase)?;
    }
    let s = trim(&s, cfg.skip, cfg.keep)?;
    zscore(&s)
}
