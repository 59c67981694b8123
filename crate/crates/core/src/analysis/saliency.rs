use serde::{Deserialize, Serialize};

use crate::diff::ParamStore;
use crate::encoders::{image_batch, ImageClassifier, JointModel};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::joint::compatibility;
use crate::par;
use crate::signal::EegSegment;

pub const DEFAULT_SCALES: [usize; 6] = [3, 5, 9, 17, 33, 65];

/// Occlusions scored per batch.
const MASK_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaliencyOptions {
    pub scales: Vec<usize>,
    /// Mask centers are taken every `stride` pixels and each value fills its
    /// `stride x stride` block; 1 evaluates every pixel.
    pub stride: usize,
}

impl Default for SaliencyOptions {
    fn default() -> Self {
        Self { scales: DEFAULT_SCALES.to_vec(), stride: 1 }
    }
}

impl SaliencyOptions {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.scales.contains(&0) {
            return Err(Error::Analysis("saliency needs at least one positive scale".into()));
        }
        if self.stride == 0 {
            return Err(Error::Analysis("stride must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleMap {
    pub sigma: usize,
    pub values: Vec<f64>,
}

/// Multiscale occlusion map of one image; `values` is min-max normalized,
/// `raw` the unnormalized sum over scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub raw: Vec<f64>,
    pub scales: Vec<ScaleMap>,
    pub min: f64,
    pub max: f64,
    /// Set when the raw map was constant; `values` is then all zeros.
    pub degenerate: bool,
}

/// Zeroes the `sigma x sigma` window centered on `(x, y)` in every color
/// plane, clipped at the borders. For even `sigma` the extra row and column
/// fall after the center.
pub fn mask_patch(image: &Image, x: usize, y: usize, sigma: usize) -> Result<Image> {
    if x >= image.width || y >= image.height {
        return Err(Error::Analysis(format!("mask center ({x}, {y}) outside {}x{} image", image.width, image.height)));
    }
    if sigma == 0 {
        return Err(Error::Analysis("mask size must be at least 1".into()));
    }
    let mut out = image.clone();
    let (x0, x1) = window(x, sigma, image.width);
    let (y0, y1) = window(y, sigma, image.height);
    let n = image.plane_len();
    for p in 0..3 {
        for yy in y0..y1 {
            out.data[p * n + yy * image.width + x0..p * n + yy * image.width + x1].fill(0.0);
        }
    }
    Ok(out)
}

fn window(c: usize, sigma: usize, n: usize) -> (usize, usize) {
    let lo = c.saturating_sub((sigma - 1) / 2);
    let hi = (c + sigma / 2 + 1).min(n);
    (lo, hi)
}

/// Mask centers on a stride grid: the middle of each `stride` block.
fn grid(n: usize, stride: usize) -> Vec<usize> {
    (0..n.div_ceil(stride)).map(|k| (k * stride + stride / 2).min(n - 1)).collect()
}

/// Raw per-pixel map `base - score(masked)` at one scale.
fn occlusion_scale<F>(image: &Image, sigma: usize, stride: usize, base: f64, score: &F) -> Result<Vec<f64>>
where
    F: Fn(&[Image]) -> Result<Vec<f64>> + Sync,
{
    let (w, h) = (image.width, image.height);
    let (gx, gy) = (grid(w, stride), grid(h, stride));
    let centers: Vec<(usize, usize)> = gy.iter().flat_map(|&y| gx.iter().map(move |&x| (x, y))).collect();
    let chunks: Vec<&[(usize, usize)]> = centers.chunks(MASK_CHUNK).collect();
    let scored = par::try_map_slice(&chunks, |c| {
        let masked = c.iter().map(|&(x, y)| mask_patch(image, x, y, sigma)).collect::<Result<Vec<_>>>()?;
        score(&masked)
    })?;
    let cell: Vec<f64> = scored.into_iter().flatten().map(|s| base - s).collect();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = cell[(y / stride) * gx.len() + x / stride];
        }
    }
    Ok(out)
}

/// Sums per-scale maps with equal weight and min-max normalizes the sum.
pub fn combine_scales(width: usize, height: usize, scales: Vec<ScaleMap>) -> SaliencyMap {
    let mut raw = vec![0.0; width * height];
    for s in &scales {
        for (r, v) in raw.iter_mut().zip(&s.values) {
            *r += v;
        }
    }
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = !(max > min);
    let values = if degenerate { vec![0.0; raw.len()] } else { raw.iter().map(|v| (v - min) / (max - min)).collect() };
    SaliencyMap { width, height, values, raw, scales, min, max, degenerate }
}

/// Occlusion saliency of `image` under an arbitrary batched score.
pub fn occlusion_map<F>(image: &Image, opts: &SaliencyOptions, score: F) -> Result<SaliencyMap>
where
    F: Fn(&[Image]) -> Result<Vec<f64>> + Sync,
{
    opts.validate()?;
    let base = score(std::slice::from_ref(image))?[0];
    let scales = opts
        .scales
        .iter()
        .map(|&sigma| Ok(ScaleMap { sigma, values: occlusion_scale(image, sigma, opts.stride, base, &score)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(combine_scales(image.width, image.height, scales))
}

fn compatibility_score<'a>(
    model: &'a JointModel,
    params: &'a ParamStore,
    e_emb: &'a [f64],
) -> impl Fn(&[Image]) -> Result<Vec<f64>> + Sync + 'a {
    move |imgs: &[Image]| {
        let refs: Vec<&Image> = imgs.iter().collect();
        let d = model.embedding_dim();
        let v = model.image.embed(params, image_batch(&refs)?)?;
        v.data().chunks(d).map(|row| compatibility(e_emb, row)).collect()
    }
}

/// `F(e, v) - F(e, mask(v, x, y, sigma))` at every pixel (or stride cell).
pub fn saliency_scale(
    model: &JointModel,
    params: &ParamStore,
    e: &EegSegment,
    v: &Image,
    sigma: usize,
    stride: usize,
) -> Result<Vec<f64>> {
    let e_emb = model.embed_eeg(params, &[e])?.remove(0);
    let score = compatibility_score(model, params, &e_emb);
    let base = score(std::slice::from_ref(v))?[0];
    occlusion_scale(v, sigma, stride.max(1), base, &score)
}

/// Multiscale compatibility saliency of the pair `(e, v)`.
pub fn saliency(
    model: &JointModel,
    params: &ParamStore,
    e: &EegSegment,
    v: &Image,
    opts: &SaliencyOptions,
) -> Result<SaliencyMap> {
    let e_emb = model.embed_eeg(params, &[e])?.remove(0);
    occlusion_map(v, opts, compatibility_score(model, params, &e_emb))
}

/// Baseline map from an image classifier: the drop in log-probability of
/// the ground-truth class when a patch is masked.
pub fn classifier_saliency(
    classifier: &ImageClassifier,
    params: &ParamStore,
    v: &Image,
    class: usize,
    opts: &SaliencyOptions,
) -> Result<SaliencyMap> {
    if class >= classifier.head.classes {
        return Err(Error::Analysis(format!("class {class} outside classifier's {} classes", classifier.head.classes)));
    }
    occlusion_map(v, opts, |imgs: &[Image]| {
        let refs: Vec<&Image> = imgs.iter().collect();
        let logits = classifier.logits(params, image_batch(&refs)?)?;
        let k = classifier.head.classes;
        Ok(logits
            .data()
            .chunks(k)
            .map(|row| {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
                row[class] - lse
            })
            .collect())
    })
}
