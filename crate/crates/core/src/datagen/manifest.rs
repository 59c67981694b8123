use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub segment: String,
    pub image: String,
    pub class: usize,
    pub subject: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
    pub config_hash: String,
    pub truth_file: String,
    /// Rows withheld from training by [`exclude_class`].
    #[serde(default)]
    pub held_out: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn classes(&self) -> BTreeSet<usize> {
        self.rows.iter().map(|r| r.class).collect()
    }

    pub fn rows_in(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// Distinct images of a split, in first-appearance order.
    pub fn images_in(&self, split: Split) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.rows_in(split).filter(|r| seen.insert(r.image.clone())).map(|r| r.image.clone()).collect()
    }
}

/// Assigns splits per image, stratified by class. Within each class the
/// images are shuffled, then `round(n * val)` go to validation,
/// `round(n * test)` to test and the rest to training.
pub fn split(manifest: &DatasetManifest, ratios: (f64, f64, f64), seed: u64) -> Result<DatasetManifest> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(Error::Dataset(format!("split ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    let mut by_class: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for row in &manifest.rows {
        let images = by_class.entry(row.class).or_default();
        if !images.contains(&row.image) {
            images.push(row.image.clone());
        }
    }
    let mut assignment: BTreeMap<String, Split> = BTreeMap::new();
    for (class, mut images) in by_class {
        if images.len() < 3 {
            return Err(Error::Dataset(format!("class {class} has only {} images; need at least 3", images.len())));
        }
        images.sort();
        images.shuffle(&mut stream_rng(seed, Stream::Split, class as u64));
        let n = images.len() as f64;
        let n_val = (n * va).round() as usize;
        let n_test = ((n * te).round() as usize).min(images.len() - n_val);
        for (i, image) in images.into_iter().enumerate() {
            let s = if i < n_val {
                Split::Val
            } else if i < n_val + n_test {
                Split::Test
            } else {
                Split::Train
            };
            assignment.insert(image, s);
        }
    }
    let mut out = manifest.clone();
    for row in &mut out.rows {
        row.split = assignment[&row.image];
    }
    Ok(out)
}

/// Moves every row of `class` out of the splits into `held_out`.
pub fn exclude_class(manifest: &DatasetManifest, class: usize) -> Result<DatasetManifest> {
    if !manifest.rows.iter().any(|r| r.class == class) {
        return Err(Error::Dataset(format!("unknown class {class}")));
    }
    let mut out = manifest.clone();
    let (gone, kept): (Vec<_>, Vec<_>) = out.rows.into_iter().partition(|r| r.class == class);
    out.rows = kept;
    out.held_out.extend(gone);
    Ok(out)
}
