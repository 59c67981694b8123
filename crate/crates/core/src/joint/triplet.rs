use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Split};
use crate::diff::{Tape, Var};
use crate::error::{Error, Result};

/// Compatibility of two embeddings: their dot product.
pub fn compatibility(e: &[f64], v: &[f64]) -> Result<f64> {
    if e.len() != v.len() {
        return Err(Error::shape("compatibility", format!("{} vs {}", e.len(), v.len())));
    }
    Ok(e.iter().zip(v).map(|(a, b)| a * b).sum())
}

/// `max(0, F_neg - F_pos)`.
pub fn triplet_loss_value(f_pos: f64, f_neg: f64) -> f64 {
    (f_neg - f_pos).max(0.0)
}

/// Batch-mean triplet loss over `[B, D]` anchor, positive and negative
/// embeddings.
pub fn triplet_loss(tape: &mut Tape, anchor: Var, positive: Var, negative: Var) -> Result<Var> {
    let f_pos = tape.row_dot(anchor, positive)?;
    let f_neg = tape.row_dot(anchor, negative)?;
    let gap = tape.sub(f_neg, f_pos)?;
    let hinge = tape.relu(gap)?;
    tape.mean(hinge)
}

/// Anchor segment (a dataset row), the image it was recorded with, and a
/// different image of the same split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Draws `batch` triplets from a split: the anchor row uniformly, the
/// negative uniformly among the split's other images (same class allowed).
pub fn sample_triplets(dataset: &Dataset, split: Split, batch: usize, rng: &mut impl Rng) -> Result<Vec<Triplet>> {
    let rows = dataset.indices(split);
    let images = dataset.image_indices(split);
    sample_from(dataset, &rows, &images, batch, rng)
}

pub(crate) fn sample_from(
    dataset: &Dataset,
    rows: &[usize],
    images: &[usize],
    batch: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Triplet>> {
    if rows.is_empty() || images.len() < 2 {
        return Err(Error::Dataset("triplet sampling needs a split with at least two images".into()));
    }
    Ok((0..batch)
        .map(|_| {
            let anchor = rows[rng.gen_range(0..rows.len())];
            let positive = dataset.samples[anchor].image;
            let negative = loop {
                let cand = images[rng.gen_range(0..images.len())];
                if cand != positive {
                    break cand;
                }
            };
            Triplet { anchor, positive, negative }
        })
        .collect())
}
