//! Welch power spectral density: Hann-windowed segments with 50% overlap,
//! averaged one-sided periodograms scaled to power per Hz.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex64, FftPlanner};

use crate::error::{Error, Result};

use super::segment::EegSegment;

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
}

impl Spectrum {
    /// Integrated power over `[lo, hi]` Hz.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        let df = self.freqs.get(1).copied().unwrap_or(1.0) - self.freqs[0];
        self.freqs
            .iter()
            .zip(&self.power)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(_, p)| p * df)
            .sum()
    }

    pub fn peak_frequency(&self) -> f64 {
        let (i, _) = self
            .power
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best });
        self.freqs[i]
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

pub fn welch(x: &[f64], sample_rate: f64, nperseg: usize) -> Result<Spectrum> {
    if nperseg == 0 || nperseg > x.len() {
        return Err(Error::Signal(format!(
            "nperseg {nperseg} must be in 1..={}",
            x.len()
        )));
    }
    let window = hann(nperseg);
    let wss: f64 = window.iter().map(|w| w * w).sum();
    let step = (nperseg / 2).max(1);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nperseg);
    let bins = nperseg / 2 + 1;
    let mut power = vec![0.0; bins];
    let mut count = 0usize;
    let mut buf = vec![Complex64::new(0.0, 0.0); nperseg];
    let mut start = 0;
    while start + nperseg <= x.len() {
        for ((b, xv), w) in buf.iter_mut().zip(&x[start..start + nperseg]).zip(&window) {
            *b = Complex64::new(xv * w, 0.0);
        }
        fft.process(&mut buf);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p += b.norm_sqr();
        }
        count += 1;
        start += step;
    }
    let scale = 1.0 / (sample_rate * wss * count as f64);
    for (k, p) in power.iter_mut().enumerate() {
        let one_sided = if k == 0 || (nperseg % 2 == 0 && k == bins - 1) { 1.0 } else { 2.0 };
        *p *= scale * one_sided;
    }
    let freqs = (0..bins).map(|k| k as f64 * sample_rate / nperseg as f64).collect();
    Ok(Spectrum { freqs, power })
}

/// Per-channel Welch spectra.
pub fn psd(segment: &EegSegment, nperseg: usize) -> Result<Vec<Spectrum>> {
    (0..segment.channels)
        .map(|c| welch(segment.channel(c), segment.sample_rate, nperseg))
        .collect()
}
