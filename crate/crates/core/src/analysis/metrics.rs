use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::signal::mean_var;

pub type Fixation = (usize, usize);

fn value_at(map: &[f64], width: usize, height: usize, (x, y): Fixation) -> Result<f64> {
    if x >= width || y >= height || map.len() != width * height {
        return Err(Error::Analysis(format!("fixation ({x}, {y}) outside {width}x{height} map")));
    }
    Ok(map[y * width + x])
}

/// Mean of the z-scored map (population std) at the fixations.
pub fn nss(map: &[f64], width: usize, height: usize, fixations: &[Fixation]) -> Result<f64> {
    if fixations.is_empty() {
        return Err(Error::Analysis("NSS needs at least one fixation".into()));
    }
    let (mean, var) = mean_var(map);
    if !(var > 0.0) {
        return Err(Error::Analysis("NSS of a constant map is undefined".into()));
    }
    let std = var.sqrt();
    let mut acc = 0.0;
    for &f in fixations {
        acc += (value_at(map, width, height, f)? - mean) / std;
    }
    Ok(acc / fixations.len() as f64)
}

/// Pearson correlation of two maps.
pub fn cc(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Analysis("CC needs two maps of equal, nonzero size".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if !(va > 0.0 && vb > 0.0) {
        return Err(Error::Analysis("CC of a constant map is undefined".into()));
    }
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64;
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Area under the ROC curve separating `pos` from `neg` scores
/// (Mann-Whitney, ties count one half).
pub fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in pos {
        for n in neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Shuffled AUC: map values at the fixations against values at fixations
/// of other images, each split drawing as many negatives as there are
/// fixations (without replacement when the pool allows). Averaged over
/// `n_splits`.
pub fn shuffled_auc(
    map: &[f64],
    width: usize,
    height: usize,
    fixations: &[Fixation],
    other_fixations: &[Fixation],
    n_splits: usize,
    seed: u64,
) -> Result<f64> {
    if fixations.is_empty() || other_fixations.is_empty() || n_splits == 0 {
        return Err(Error::Analysis("s-AUC needs fixations, a negative pool and at least one split".into()));
    }
    let pos = fixations.iter().map(|&f| value_at(map, width, height, f)).collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for split in 0..n_splits {
        let mut rng = stream_rng(seed, Stream::Shuffle, u64::MAX - split as u64);
        let neg: Vec<Fixation> = if other_fixations.len() >= fixations.len() {
            other_fixations.choose_multiple(&mut rng, fixations.len()).copied().collect()
        } else {
            (0..fixations.len()).map(|_| *other_fixations.choose(&mut rng).expect("nonempty")).collect()
        };
        let neg = neg.into_iter().map(|f| value_at(map, width, height, f)).collect::<Result<Vec<_>>>()?;
        total += auc(&pos, &neg);
    }
    Ok(total / n_splits as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMetrics {
    pub s_auc: f64,
    pub nss: f64,
    pub cc: Option<f64>,
    pub n_splits: usize,
    /// How the s-AUC negatives were drawn.
    pub negatives: String,
}

pub fn saliency_metrics(
    map: &[f64],
    width: usize,
    height: usize,
    fixations: &[Fixation],
    other_fixations: &[Fixation],
    dense_truth: Option<&[f64]>,
    n_splits: usize,
    seed: u64,
) -> Result<SaliencyMetrics> {
    Ok(SaliencyMetrics {
        s_auc: shuffled_auc(map, width, height, fixations, other_fixations, n_splits, seed)?,
        nss: nss(map, width, height, fixations)?,
        cc: dense_truth.map(|t| cc(map, t)).transpose()?,
        n_splits,
        negatives: "fixations of other images in the evaluation split".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        let m = [0.0, 1.0, 2.0, 3.0];
        let v = nss(&m, 2, 2, &[(1, 1)]).unwrap();
        assert!((v - 1.5 / 1.25f64.sqrt()).abs() < 1e-12);
        assert!((cc(&m, &m).unwrap() - 1.0).abs() < 1e-12);
        assert!(nss(&[1.0; 4], 2, 2, &[(0, 0)]).is_err());
        assert!(cc(&[1.0; 4], &m).is_err());
        assert_eq!(auc(&[1.0, 2.0], &[0.0, 2.0]), 0.625);
    }

    #[test]
    fn constant_map_is_uninformative() {
        let m = vec![0.5; 100];
        let fix: Vec<Fixation> = (0..10).map(|i| (i, i)).collect();
        let other: Vec<Fixation> = (0..10).map(|i| (9 - i, i)).collect();
        assert_eq!(shuffled_auc(&m, 10, 10, &fix, &other, 100, 1).unwrap(), 0.5);
    }
}
