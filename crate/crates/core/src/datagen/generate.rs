use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{write_ppm, Image};
use crate::par;
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::signal::{write_eegb, EegSegment};

use super::config::GeneratorConfig;
use super::manifest::{split, DatasetManifest, ManifestRow, Split};

pub const SIGNATURE_BAND: (f64, f64) = (55.0, 95.0);
pub const TRUTH_FILE: &str = "truth.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "generator_config.json";
pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Pixel rectangle, top-left corner plus size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    /// Center pixel (rounded down).
    pub fn center(&self) -> (usize, usize) {
        (self.x + self.width / 2, self.y + self.height / 2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureComponent {
    pub frequency: f64,
    pub phase: f64,
    pub channel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantTruth {
    pub variant: usize,
    pub stripe_angle: f64,
    pub components: Vec<SignatureComponent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTruth {
    pub class: usize,
    pub active_channels: Vec<usize>,
    pub patch: Rect,
    pub texture_id: usize,
    pub color: [f64; 3],
    pub stripe_period: f64,
    pub variants: Vec<VariantTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTruth {
    pub image: String,
    pub class: usize,
    pub variant: usize,
    /// Patch after per-image jitter.
    pub patch: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTruth {
    pub segment: String,
    pub image: String,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub classes: Vec<ClassTruth>,
    pub images: Vec<ImageTruth>,
    pub segments: Vec<SegmentTruth>,
}

impl PlantedTruth {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn image(&self, name: &str) -> Option<&ImageTruth> {
        self.images.iter().find(|t| t.image == name)
    }
}

pub fn image_name(j: usize) -> String {
    format!("images/i{j:05}.ppm")
}

pub fn segment_name(s: usize) -> String {
    format!("eeg/s{s:06}.eegb")
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match (i as i64).rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn jitter_limit(cfg: &GeneratorConfig) -> (usize, usize) {
    (cfg.image_width / 10, cfg.image_height / 10)
}

/// Class signatures, patches and active channels, then per-image variants
/// and jittered patches, then per-segment noise seeds.
pub fn plant_truth(cfg: &GeneratorConfig) -> Result<PlantedTruth> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, Stream::Truth, 0);
    let q = cfg.active_channels_per_class;
    let mut pool: Vec<usize> = (0..cfg.channels).collect();
    pool.shuffle(&mut rng);
    let disjoint = cfg.n_classes * q <= cfg.channels;
    let (jx, jy) = jitter_limit(cfg);
    let (lo, hi) = SIGNATURE_BAND;
    let slot = (hi - lo) / cfg.n_variants as f64;
    let mut classes = Vec::with_capacity(cfg.n_classes);
    for k in 0..cfg.n_classes {
        let mut active: Vec<usize> = if disjoint {
            pool[k * q..(k + 1) * q].to_vec()
        } else {
            let mut all: Vec<usize> = (0..cfg.channels).collect();
            all.shuffle(&mut rng);
            all.truncate(q);
            all
        };
        active.sort_unstable();
        let side = |n: usize, r: &mut ChaCha8Rng| {
            let a = ((0.22 * n as f64).round() as usize).max(2);
            let b = ((0.31 * n as f64).round() as usize).max(a);
            r.gen_range(a..=b)
        };
        let (w, h) = (side(cfg.image_width, &mut rng), side(cfg.image_height, &mut rng));
        let x = rng.gen_range(jx..=(cfg.image_width - w - jx).max(jx));
        let y = rng.gen_range(jy..=(cfg.image_height - h - jy).max(jy));
        let variants = (0..cfg.n_variants)
            .map(|v| {
                let center = lo + slot * (v as f64 + 0.5);
                let frequency = center + slot * rng.gen_range(-0.25..0.25);
                VariantTruth {
                    variant: v,
                    stripe_angle: PI * v as f64 / cfg.n_variants as f64,
                    components: active
                        .iter()
                        .map(|&channel| SignatureComponent { frequency, phase: rng.gen_range(0.0..2.0 * PI), channel })
                        .collect(),
                }
            })
            .collect();
        classes.push(ClassTruth {
            class: k,
            active_channels: active,
            patch: Rect { x, y, width: w, height: h },
            texture_id: k,
            color: hsv_to_rgb(k as f64 / cfg.n_classes as f64, 0.85, 0.95),
            stripe_period: 4.0 + (k % 3) as f64,
            variants,
        });
    }
    let images = (0..cfg.n_images())
        .map(|j| {
            let k = j / cfg.segments_per_class;
            let mut r = stream_rng(cfg.seed, Stream::Image, j as u64);
            let variant = r.gen_range(0..cfg.n_variants);
            let base = classes[k].patch;
            let shift = |p: usize, lim: usize, size: usize, extent: usize, r: &mut ChaCha8Rng| {
                let d = r.gen_range(-(lim as i64)..=lim as i64);
                (p as i64 + d).clamp(0, (extent - size) as i64) as usize
            };
            let x = shift(base.x, jx, base.width, cfg.image_width, &mut r);
            let y = shift(base.y, jy, base.height, cfg.image_height, &mut r);
            ImageTruth { image: image_name(j), class: k, variant, patch: Rect { x, y, ..base } }
        })
        .collect();
    let segments = (0..cfg.n_segments())
        .map(|s| SegmentTruth {
            segment: segment_name(s),
            image: image_name(s / cfg.n_subjects),
            noise_seed: derive_seed(cfg.seed, Stream::Segment, s as u64),
        })
        .collect();
    Ok(PlantedTruth { classes, images, segments })
}

fn normal(rng: &mut impl Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

/// Unit-variance background: a one-pole low-pass (corner near 5 Hz at 1 kHz)
/// mixed with a weaker white component, so power falls with frequency.
fn background(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    const POLE: f64 = 0.97;
    const WHITE: f64 = 0.3;
    let gain = (1.0 - POLE * POLE).sqrt();
    let norm = (1.0 + WHITE * WHITE).sqrt();
    let mut state = normal(rng) / gain;
    (0..n)
        .map(|_| {
            state = POLE * state + normal(rng);
            (gain * state + WHITE * normal(rng)) / norm
        })
        .collect()
}

pub fn render_segment(cfg: &GeneratorConfig, truth: &PlantedTruth, s: usize) -> Result<EegSegment> {
    let seg_truth = &truth.segments[s];
    let j = s / cfg.n_subjects;
    let img = &truth.images[j];
    let class = &truth.classes[img.class];
    let variant = &class.variants[img.variant];
    let mut rng = ChaCha8Rng::seed_from_u64(seg_truth.noise_seed);
    let n = cfg.samples;
    let mut data = Vec::with_capacity(cfg.channels * n);
    for _ in 0..cfg.channels {
        data.extend(background(&mut rng, n));
    }
    let amp = cfg.snr * 2f64.sqrt() * (1.0 + 0.1 * rng.gen_range(-1.0..1.0));
    let dphi = 0.3 * rng.gen_range(-1.0..1.0);
    for comp in &variant.components {
        let row = &mut data[comp.channel * n..(comp.channel + 1) * n];
        for (t, v) in row.iter_mut().enumerate().skip(cfg.onset_samples) {
            let time = (t - cfg.onset_samples) as f64 / cfg.sample_rate;
            *v += amp * (2.0 * PI * comp.frequency * time + comp.phase + dphi).sin();
        }
    }
    // stored as f32 on disk; round here so in-memory and reloaded data agree
    let data = data.into_iter().map(|v| v as f32 as f64).collect();
    let mut seg = EegSegment::new(cfg.channels, n, cfg.sample_rate, data)?;
    seg.class_label = Some(img.class);
    seg.image_id = Some(img.image.clone());
    seg.subject_id = Some(s % cfg.n_subjects);
    Ok(seg)
}

pub fn render_image(cfg: &GeneratorConfig, truth: &PlantedTruth, j: usize) -> Image {
    let (w, h) = (cfg.image_width, cfg.image_height);
    let it = &truth.images[j];
    let class = &truth.classes[it.class];
    let angle = class.variants[it.variant].stripe_angle;
    // Background draws come from a separate counter so they do not shift with
    // the variant/jitter draws made while planting the truth.
    let mut r = stream_rng(cfg.seed, Stream::Image, (1 << 32) | j as u64);
    let base: [f64; 3] = std::array::from_fn(|_| r.gen_range(0.08..0.18));
    let (gx, gy) = (r.gen_range(-0.08..0.08), r.gen_range(-0.08..0.08));
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            (
                r.gen_range(0.0..w as f64),
                r.gen_range(0.0..h as f64),
                r.gen_range(0.06..0.16) * w.min(h) as f64,
                std::array::from_fn(|_| r.gen_range(-0.07..0.07)),
            )
        })
        .collect();
    let phase = r.gen_range(0.0..2.0 * PI);
    let mut img = Image::zeros(w, h);
    let (ca, sa) = (angle.cos(), angle.sin());
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 / w as f64 - 0.5, y as f64 / h as f64 - 0.5);
            let mut px: [f64; 3] = std::array::from_fn(|p| base[p] + gx * fx + gy * fy);
            for (bx, by, rad, col) in &blobs {
                let d2 = ((x as f64 - bx).powi(2) + (y as f64 - by).powi(2)) / (rad * rad);
                let wgt = (-0.5 * d2).exp();
                for p in 0..3 {
                    px[p] += wgt * col[p];
                }
            }
            if it.patch.contains(x, y) {
                let u = (x as f64 * ca + y as f64 * sa) * 2.0 * PI / class.stripe_period + phase;
                let on = if u.sin() >= 0.0 { 1.0 } else { 0.15 };
                px = std::array::from_fn(|p| class.color[p] * on);
            }
            for (p, v) in px.iter().enumerate() {
                img.set(p, x, y, v.clamp(0.0, 1.0));
            }
        }
    }
    img.quantized()
}

pub fn build_manifest(cfg: &GeneratorConfig, truth: &PlantedTruth) -> Result<DatasetManifest> {
    let rows = truth
        .segments
        .iter()
        .enumerate()
        .map(|(s, st)| ManifestRow {
            segment: st.segment.clone(),
            image: st.image.clone(),
            class: truth.images[s / cfg.n_subjects].class,
            subject: s % cfg.n_subjects,
            split: Split::Train,
        })
        .collect();
    let manifest =
        DatasetManifest { rows, config_hash: cfg.hash(), truth_file: TRUTH_FILE.into(), held_out: Vec::new() };
    if cfg.segments_per_class >= 3 {
        split(&manifest, DEFAULT_SPLIT, cfg.seed)
    } else {
        Ok(manifest)
    }
}

/// Writes a complete dataset tree under `dir`: `eeg/*.eegb` raw segments,
/// `images/*.ppm`, `truth.json`, `manifest.json` and the generator config.
pub fn generate(cfg: &GeneratorConfig, dir: &Path) -> Result<(DatasetManifest, PlantedTruth)> {
    let truth = plant_truth(cfg)?;
    let manifest = build_manifest(cfg, &truth)?;
    for sub in ["eeg", "images"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    par::try_map_range(cfg.n_images(), |j| write_ppm(&dir.join(image_name(j)), &render_image(cfg, &truth, j)))?;
    par::try_map_range(cfg.n_segments(), |s| {
        write_eegb(&dir.join(segment_name(s)), &render_segment(cfg, &truth, s)?)
    })?;
    let write_json = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write_json(TRUTH_FILE, serde_json::to_string_pretty(&truth)?)?;
    write_json(CONFIG_FILE, serde_json::to_string_pretty(cfg)?)?;
    manifest.save(&dir.join(MANIFEST_FILE))?;
    Ok((manifest, truth))
}
