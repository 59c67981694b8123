use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCALP_SIZE: usize = 400;
pub const SCALP_SIGMA: f64 = 13.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Electrode {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub group: String,
}

/// Electrode positions on the unit square; the scalp is the disc of radius
/// 0.5 centered at (0.5, 0.5), nose up (small `y`). Row order is the channel
/// order of the EEG data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalpLayout {
    pub electrodes: Vec<Electrode>,
}

fn group_of(x: f64, y: f64) -> &'static str {
    if (x - 0.5).abs() > 0.3 {
        "T"
    } else if y < 0.25 {
        "Fp"
    } else if y < 0.55 {
        "C"
    } else if y < 0.78 {
        "P"
    } else {
        "O"
    }
}

impl ScalpLayout {
    /// A synthetic 128-electrode cap: concentric rings, names numbered
    /// within each cortex group.
    pub fn standard_128() -> Self {
        const RINGS: [(f64, usize); 7] =
            [(0.0, 1), (0.07, 6), (0.14, 12), (0.21, 18), (0.28, 24), (0.35, 30), (0.42, 37)];
        let mut counts = std::collections::HashMap::new();
        let mut electrodes = Vec::with_capacity(128);
        for (ri, &(r, n)) in RINGS.iter().enumerate() {
            let offset = if ri % 2 == 0 { 0.0 } else { PI / n as f64 };
            for k in 0..n {
                let a = offset + 2.0 * PI * k as f64 / n as f64;
                let (x, y) = (0.5 + r * a.sin(), 0.5 - r * a.cos());
                let g = group_of(x, y);
                let idx = counts.entry(g).or_insert(0usize);
                *idx += 1;
                electrodes.push(Electrode { name: format!("{g}{idx}"), x, y, group: g.to_string() });
            }
        }
        Self { electrodes }
    }

    pub fn len(&self) -> usize {
        self.electrodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.electrodes.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for e in &self.electrodes {
            if !names.insert(&e.name) {
                return Err(Error::Analysis(format!("duplicate electrode name {}", e.name)));
            }
            let r2 = (e.x - 0.5).powi(2) + (e.y - 0.5).powi(2);
            if !(r2 <= 0.25 + 1e-12) {
                return Err(Error::Analysis(format!("electrode {} lies outside the scalp disc", e.name)));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,x,y,group\n");
        for e in &self.electrodes {
            s.push_str(&format!("{},{},{},{}\n", e.name, e.x, e.y, e.group));
        }
        s
    }

    pub fn from_csv(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some(h) if h.trim() == "name,x,y,group" => {}
            _ => return Err(Error::format(origin, "expected header name,x,y,group")),
        }
        let electrodes = lines
            .enumerate()
            .map(|(i, line)| {
                let f: Vec<&str> = line.split(',').map(str::trim).collect();
                if f.len() != 4 {
                    return Err(Error::format(origin, format!("row {}: expected 4 fields", i + 1)));
                }
                let num = |s: &str| s.parse::<f64>().map_err(|_| Error::format(origin, format!("row {}: bad number {s:?}", i + 1)));
                Ok(Electrode { name: f[0].into(), x: num(f[1])?, y: num(f[2])?, group: f[3].into() })
            })
            .collect::<Result<Vec<_>>>()?;
        let layout = Self { electrodes };
        layout.validate()?;
        Ok(layout)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Discrete Gaussian of standard deviation `sigma` truncated at 3 sigma and
/// normalized to unit sum.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Row-major `size x size` grayscale map in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalpMap {
    pub size: usize,
    pub values: Vec<f64>,
}

pub fn electrode_pixel(e: &Electrode, size: usize) -> (usize, usize) {
    let px = |v: f64| ((v * (size - 1) as f64).round().max(0.0) as usize).min(size - 1);
    (px(e.x), px(e.y))
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        v.iter().map(|x| (x - min) / (max - min)).collect()
    } else {
        // all-equal input: every entry carries full weight
        vec![1.0; v.len()]
    }
}

/// Normalizes scores, splats them at electrode pixels, blurs with a
/// Gaussian of `sigma` pixels and renormalizes to `[0, 1]`.
pub fn render_scalp_map(scores: &[f64], layout: &ScalpLayout, size: usize, sigma: f64) -> Result<ScalpMap> {
    if scores.len() != layout.len() {
        return Err(Error::Analysis(format!("{} scores for a {}-electrode layout", scores.len(), layout.len())));
    }
    if size == 0 || !(sigma > 0.0) {
        return Err(Error::Analysis("scalp map needs size >= 1 and sigma > 0".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Analysis("non-finite channel score".into()));
    }
    let norm = normalize(scores);
    let mut img = vec![0.0; size * size];
    for (e, s) in layout.electrodes.iter().zip(&norm) {
        let (x, y) = electrode_pixel(e, size);
        img[y * size + x] += s;
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let n = size as isize;
    let blur = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; size * size];
        for y in 0..n {
            for x in 0..n {
                let mut acc = 0.0;
                for (i, w) in k.iter().enumerate() {
                    let d = i as isize - r;
                    let (sx, sy) = if horizontal { (x + d, y) } else { (x, y + d) };
                    if (0..n).contains(&sx) && (0..n).contains(&sy) {
                        acc += w * src[(sy * n + sx) as usize];
                    }
                }
                out[(y * n + x) as usize] = acc;
            }
        }
        out
    };
    let blurred = blur(&blur(&img, true), false);
    let max = blurred.iter().cloned().fold(0.0, f64::max);
    let min = blurred.iter().cloned().fold(f64::INFINITY, f64::min);
    let values = if max > min { blurred.iter().map(|v| (v - min) / (max - min)).collect() } else { vec![0.0; blurred.len()] };
    Ok(ScalpMap { size, values })
}
