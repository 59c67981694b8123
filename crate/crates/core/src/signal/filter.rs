//! Butterworth IIR design (analog prototype, frequency transform, bilinear
//! transform with prewarping) emitted as second-order sections.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default -3 dB bandwidth of a notch, in Hz.
pub const NOTCH_BANDWIDTH_HZ: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Bandpass,
    Notch,
    Lowpass,
}

/// One biquad, `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterPhase {
    /// Single forward pass from zero initial conditions.
    #[default]
    Causal,
    /// Forward pass followed by a time-reversed pass.
    ZeroPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub order: usize,
    /// Band edges for a bandpass, `[f0, bandwidth]` for a notch, `[fc]` for a lowpass.
    pub cutoffs: Vec<f64>,
    pub sample_rate: f64,
    pub sections: Vec<Biquad>,
}

struct Zpk {
    zeros: Vec<Complex64>,
    poles: Vec<Complex64>,
    gain: f64,
}

fn prototype(order: usize) -> Vec<Complex64> {
    let n = order as f64;
    (0..order)
        .map(|i| {
            let m = -(n - 1.0) + 2.0 * i as f64;
            -Complex64::from_polar(1.0, PI * m / (2.0 * n))
        })
        .collect()
}

fn prewarp(f: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f / fs).tan()
}

fn bilinear(analog: Zpk, fs: f64) -> Zpk {
    let fs2 = Complex64::new(2.0 * fs, 0.0);
    let degree = analog.poles.len() - analog.zeros.len();
    let num: Complex64 = analog.zeros.iter().map(|z| fs2 - z).product();
    let den: Complex64 = analog.poles.iter().map(|p| fs2 - p).product();
    let mut zeros: Vec<Complex64> = analog.zeros.iter().map(|z| (fs2 + z) / (fs2 - z)).collect();
    zeros.extend(std::iter::repeat(Complex64::new(-1.0, 0.0)).take(degree));
    Zpk {
        zeros,
        poles: analog.poles.iter().map(|p| (fs2 + p) / (fs2 - p)).collect(),
        gain: analog.gain * (num / den).re,
    }
}

/// Groups roots into real-coefficient quadratics `[1, c1, c2]`.
fn quadratics(roots: &[Complex64]) -> Vec<[f64; 3]> {
    const TOL: f64 = 1e-10;
    let mut out = Vec::new();
    let mut reals: Vec<f64> = Vec::new();
    for r in roots {
        if r.im.abs() <= TOL * r.norm().max(1.0) {
            reals.push(r.re);
        } else if r.im > 0.0 {
            out.push([1.0, -2.0 * r.re, r.norm_sqr()]);
        }
    }
    for pair in reals.chunks(2) {
        match pair {
            [p, q] => out.push([1.0, -(p + q), p * q]),
            [p] => out.push([1.0, -p, 0.0]),
            _ => unreachable!(),
        }
    }
    out
}

fn to_sections(d: &Zpk) -> Vec<Biquad> {
    let pq = quadratics(&d.poles);
    let mut zq = quadratics(&d.zeros);
    zq.resize(pq.len(), [1.0, 0.0, 0.0]);
    let mut sections: Vec<Biquad> = pq.into_iter().zip(zq).map(|(a, b)| Biquad { b, a }).collect();
    if let Some(first) = sections.first_mut() {
        for c in &mut first.b {
            *c *= d.gain;
        }
    }
    sections
}

fn check_below_nyquist(f: f64, fs: f64) -> Result<()> {
    if !(f > 0.0) || f >= fs / 2.0 {
        return Err(Error::FilterDesign(format!(
            "cutoff {f} Hz must lie in (0, {}) Hz",
            fs / 2.0
        )));
    }
    Ok(())
}

pub fn design_filter(kind: FilterKind, order: usize, cutoffs: &[f64], sample_rate: f64) -> Result<FilterSpec> {
    if order == 0 {
        return Err(Error::FilterDesign("order must be >= 1".into()));
    }
    if !(sample_rate > 0.0) {
        return Err(Error::FilterDesign("sample rate must be positive".into()));
    }
    let proto = prototype(order);
    let analog = match kind {
        FilterKind::Lowpass => {
            let &[fc] = cutoffs else {
                return Err(Error::FilterDesign("lowpass takes one cutoff".into()));
            };
            check_below_nyquist(fc, sample_rate)?;
            let wc = prewarp(fc, sample_rate);
            Zpk { zeros: vec![], poles: proto.iter().map(|p| p * wc).collect(), gain: wc.powi(order as i32) }
        }
        FilterKind::Bandpass => {
            let &[lo, hi] = cutoffs else {
                return Err(Error::FilterDesign("bandpass takes two cutoffs".into()));
            };
            check_below_nyquist(lo, sample_rate)?;
            check_below_nyquist(hi, sample_rate)?;
            if lo >= hi {
                return Err(Error::FilterDesign(format!("band edges out of order: {lo} >= {hi}")));
            }
            let (wl, wh) = (prewarp(lo, sample_rate), prewarp(hi, sample_rate));
            let (w0, bw) = ((wl * wh).sqrt(), wh - wl);
            let mut poles = Vec::with_capacity(2 * order);
            for p in &proto {
                let half = p * (bw / 2.0);
                let root = (half * half - w0 * w0).sqrt();
                poles.push(half + root);
                poles.push(half - root);
            }
            Zpk { zeros: vec![Complex64::new(0.0, 0.0); order], poles, gain: bw.powi(order as i32) }
        }
        FilterKind::Notch => {
            let (f0, width) = match *cutoffs {
                [f0] => (f0, NOTCH_BANDWIDTH_HZ),
                [f0, w] => (f0, w),
                _ => return Err(Error::FilterDesign("notch takes [f0] or [f0, bandwidth]".into())),
            };
            if !(width > 0.0) {
                return Err(Error::FilterDesign("notch bandwidth must be positive".into()));
            }
            check_below_nyquist(f0 - width / 2.0, sample_rate)?;
            check_below_nyquist(f0 + width / 2.0, sample_rate)?;
            // Null placed exactly on f0; width from the prewarped edges.
            let w0 = prewarp(f0, sample_rate);
            let bw = prewarp(f0 + width / 2.0, sample_rate) - prewarp(f0 - width / 2.0, sample_rate);
            let mut poles = Vec::with_capacity(2 * order);
            let mut zeros = Vec::with_capacity(2 * order);
            for p in &proto {
                let half = (bw / 2.0) / p;
                let root = (half * half - w0 * w0).sqrt();
                poles.push(half + root);
                poles.push(half - root);
                zeros.push(Complex64::new(0.0, w0));
                zeros.push(Complex64::new(0.0, -w0));
            }
            Zpk { zeros, poles, gain: 1.0 }
        }
    };
    let digital = bilinear(analog, sample_rate);
    if let Some(p) = digital.poles.iter().find(|p| p.norm() >= 1.0) {
        return Err(Error::FilterDesign(format!("unstable design: pole at |z| = {}", p.norm())));
    }
    Ok(FilterSpec {
        kind,
        order,
        cutoffs: match kind {
            FilterKind::Notch if cutoffs.len() == 1 => vec![cutoffs[0], NOTCH_BANDWIDTH_HZ],
            _ => cutoffs.to_vec(),
        },
        sample_rate,
        sections: to_sections(&digital),
    })
}

impl FilterSpec {
    /// Complex frequency response at `freq` Hz.
    pub fn response(&self, freq: f64) -> Complex64 {
        let w = 2.0 * PI * freq / self.sample_rate;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        self.sections
            .iter()
            .map(|s| (s.b[0] + z1 * s.b[1] + z2 * s.b[2]) / (s.a[0] + z1 * s.a[1] + z2 * s.a[2]))
            .product()
    }

    pub fn magnitude_db(&self, freq: f64) -> f64 {
        20.0 * self.response(freq).norm().log10()
    }

    /// Poles of every section, as roots of the denominator quadratics.
    pub fn poles(&self) -> Vec<Complex64> {
        let mut out = Vec::new();
        for s in &self.sections {
            let (a1, a2) = (s.a[1], s.a[2]);
            let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
            out.push((-a1 + disc) / 2.0);
            out.push((-a1 - disc) / 2.0);
        }
        out
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    /// Causal filtering from zero initial conditions (transposed direct form II).
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            let (mut s1, mut s2) = (0.0, 0.0);
            for v in y.iter_mut() {
                let xin = *v;
                let out = s.b[0] * xin + s1;
                s1 = s.b[1] * xin - s.a[1] * out + s2;
                s2 = s.b[2] * xin - s.a[2] * out;
                *v = out;
            }
        }
        y
    }

    pub fn filter_with(&self, x: &[f64], phase: FilterPhase) -> Vec<f64> {
        match phase {
            FilterPhase::Causal => self.filter(x),
            FilterPhase::ZeroPhase => {
                let mut y = self.filter(x);
                y.reverse();
                let mut y = self.filter(&y);
                y.reverse();
                y
            }
        }
    }
}
