use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{read_ppm, Image};
use crate::par;
use crate::signal::{preprocess, read_eegb, restrict, EegSegment, FrequencyBand, PrepConfig, TimeWindow};

use super::config::GeneratorConfig;
use super::generate::{build_manifest, plant_truth, render_image, render_segment, PlantedTruth, MANIFEST_FILE};
use super::manifest::{DatasetManifest, Split};

/// One recorded segment and the image it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub segment_file: String,
    /// Index into [`Dataset::images`].
    pub image: usize,
    pub class: usize,
    pub subject: usize,
    /// `None` for rows withheld by class exclusion.
    pub split: Option<Split>,
}

/// A dataset held in memory, EEG already preprocessed.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub eeg: Vec<EegSegment>,
    pub images: Vec<Image>,
    pub image_files: Vec<String>,
    pub image_classes: Vec<usize>,
    pub truth: Option<PlantedTruth>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    fn assemble(
        manifest: DatasetManifest,
        truth: Option<PlantedTruth>,
        load_eeg: impl Fn(&str) -> Result<EegSegment> + Sync,
        load_image: impl Fn(&str) -> Result<Image> + Sync,
    ) -> Result<Self> {
        let rows: Vec<(&super::manifest::ManifestRow, Option<Split>)> = manifest
            .rows
            .iter()
            .map(|r| (r, Some(r.split)))
            .chain(manifest.held_out.iter().map(|r| (r, None)))
            .collect();
        let mut image_files: Vec<String> = Vec::new();
        let mut image_classes = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut samples = Vec::with_capacity(rows.len());
        for (row, split) in &rows {
            let image = *index.entry(row.image.clone()).or_insert_with(|| {
                image_files.push(row.image.clone());
                image_classes.push(row.class);
                image_files.len() - 1
            });
            samples.push(Sample {
                segment_file: row.segment.clone(),
                image,
                class: row.class,
                subject: row.subject,
                split: *split,
            });
        }
        let eeg = par::try_map_slice(&samples, |s| load_eeg(&s.segment_file))?;
        let images = par::try_map_slice(&image_files, |f| load_image(f))?;
        Ok(Self { samples, eeg, images, image_files, image_classes, truth, manifest })
    }

    /// Loads `dir/manifest.json` and everything it references. With `prep`
    /// set, raw segments are preprocessed on load; otherwise they are taken
    /// as already preprocessed.
    pub fn load(dir: &Path, prep: Option<&PrepConfig>) -> Result<Self> {
        let manifest = DatasetManifest::load(&dir.join(MANIFEST_FILE))?;
        let truth_path = dir.join(&manifest.truth_file);
        let truth = if truth_path.exists() { Some(PlantedTruth::load(&truth_path)?) } else { None };
        Self::assemble(
            manifest,
            truth,
            |f| {
                let raw = read_eegb(&dir.join(f))?;
                match prep {
                    Some(p) => preprocess(&raw, p),
                    None => Ok(raw),
                }
            },
            |f| read_ppm(&dir.join(f)),
        )
    }

    /// Generates a dataset straight into memory; identical to writing it with
    /// `generate` and loading it back.
    pub fn synthesize(cfg: &GeneratorConfig, prep: &PrepConfig) -> Result<Self> {
        let truth = plant_truth(cfg)?;
        let manifest = build_manifest(cfg, &truth)?;
        let seg_index: HashMap<&str, usize> =
            truth.segments.iter().enumerate().map(|(i, s)| (s.segment.as_str(), i)).collect();
        let img_index: HashMap<&str, usize> =
            truth.images.iter().enumerate().map(|(i, s)| (s.image.as_str(), i)).collect();
        let ds = Self::assemble(
            manifest.clone(),
            None,
            |f| preprocess(&render_segment(cfg, &truth, seg_index[f])?, prep),
            |f| Ok(render_image(cfg, &truth, img_index[f])),
        )?;
        Ok(Self { truth: Some(truth), ..ds })
    }

    /// Replaces the manifest view (e.g. after `exclude_class` or a re-split)
    /// while keeping loaded data. Every row must already be present.
    pub fn with_manifest(&self, manifest: DatasetManifest) -> Result<Self> {
        let by_file: HashMap<&str, usize> =
            self.samples.iter().enumerate().map(|(i, s)| (s.segment_file.as_str(), i)).collect();
        let lookup = |f: &str| {
            by_file
                .get(f)
                .map(|&i| self.eeg[i].clone())
                .ok_or_else(|| Error::Dataset(format!("segment {f} not loaded")))
        };
        let img_by_file: HashMap<&str, usize> =
            self.image_files.iter().enumerate().map(|(i, f)| (f.as_str(), i)).collect();
        let img_lookup = |f: &str| {
            img_by_file
                .get(f)
                .map(|&i| self.images[i].clone())
                .ok_or_else(|| Error::Dataset(format!("image {f} not loaded")))
        };
        Self::assemble(manifest, self.truth.clone(), lookup, img_lookup)
    }

    pub fn n_classes(&self) -> usize {
        self.samples.iter().map(|s| s.class + 1).max().unwrap_or(0)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].split == Some(split)).collect()
    }

    /// Indices of rows withheld by class exclusion.
    pub fn held_out_indices(&self) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].split.is_none()).collect()
    }

    /// Distinct image indices appearing in a split, ascending.
    pub fn image_indices(&self, split: Split) -> Vec<usize> {
        let mut v: Vec<usize> = self.indices(split).into_iter().map(|i| self.samples[i].image).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Copy with every segment band- and/or window-restricted.
    pub fn restricted(&self, band: Option<&FrequencyBand>, window: Option<&TimeWindow>) -> Result<Self> {
        if band.is_none() && window.is_none() {
            return Ok(self.clone());
        }
        let eeg = par::try_map_slice(&self.eeg, |e| restrict(e, band, window))?;
        Ok(Self { eeg, ..self.clone() })
    }
}
