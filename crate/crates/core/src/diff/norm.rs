//! Batch normalization over the feature axis (axis 1) of `[B, F, ...]` inputs.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BnMode {
    /// Normalize with batch statistics; the caller folds the returned
    /// [`BatchStats`] into its running estimates.
    Train,
    /// Normalize with the supplied running statistics.
    Eval,
}

/// Statistics of one training-mode batch. `var` is the unbiased estimate,
/// which is what running statistics accumulate.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
    pub train: bool,
}

fn layout(x: &Tensor) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(Error::shape("batch_norm", format!("need [B,F,...], got {s:?}")));
    }
    Ok((s[0], s[1], s[2..].iter().product()))
}

pub(crate) fn forward(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running: Option<(&[f64], &[f64])>,
    eps: f64,
    mode: BnMode,
) -> Result<(Tensor, BnCache, Option<BatchStats>)> {
    let (b, f, s) = layout(x)?;
    if gamma.len() != f || beta.len() != f {
        return Err(Error::shape("batch_norm", format!("{f} features, gamma {}, beta {}", gamma.len(), beta.len())));
    }
    if eps <= 0.0 {
        return Err(Error::InvalidArgument("batch_norm: eps must be > 0".into()));
    }
    let xd = x.data();
    let n = (b * s) as f64;
    let (mean, var, stats) = match mode {
        BnMode::Train => {
            if b < 2 {
                return Err(Error::InvalidArgument(
                    "batch_norm: train mode needs a batch of at least 2".into(),
                ));
            }
            let mut mean = vec![0.0; f];
            let mut var = vec![0.0; f];
            for fi in 0..f {
                let mut acc = 0.0;
                for bi in 0..b {
                    acc += xd[(bi * f + fi) * s..(bi * f + fi + 1) * s].iter().sum::<f64>();
                }
                let m = acc / n;
                let mut sq = 0.0;
                for bi in 0..b {
                    sq += xd[(bi * f + fi) * s..(bi * f + fi + 1) * s]
                        .iter()
                        .map(|v| (v - m) * (v - m))
                        .sum::<f64>();
                }
                mean[fi] = m;
                var[fi] = sq / n;
            }
            let unbiased = var.iter().map(|v| v * n / (n - 1.0)).collect();
            let stats = BatchStats { mean: mean.clone(), var: unbiased };
            (mean, var, Some(stats))
        }
        BnMode::Eval => {
            let (rm, rv) = running.ok_or_else(|| {
                Error::InvalidArgument("batch_norm: eval mode needs running statistics".into())
            })?;
            if rm.len() != f || rv.len() != f {
                return Err(Error::shape("batch_norm", "running statistics length"));
            }
            (rm.to_vec(), rv.to_vec(), None)
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; xd.len()];
    let mut y = vec![0.0; xd.len()];
    for bi in 0..b {
        for fi in 0..f {
            let r = (bi * f + fi) * s..(bi * f + fi + 1) * s;
            let (m, is, g, be) = (mean[fi], inv_std[fi], gamma[fi], beta[fi]);
            for ((xh, yv), xv) in xhat[r.clone()].iter_mut().zip(&mut y[r.clone()]).zip(&xd[r]) {
                *xh = (xv - m) * is;
                *yv = g * *xh + be;
            }
        }
    }
    let shape = x.shape().to_vec();
    let cache = BnCache {
        xhat: Tensor::new(shape.clone(), xhat)?,
        inv_std,
        train: mode == BnMode::Train,
    };
    Ok((Tensor::new(shape, y)?, cache, stats))
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn backward(dy: &Tensor, gamma: &[f64], cache: &BnCache) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (b, f, s) = layout(dy)?;
    let n = (b * s) as f64;
    let (dyd, xh) = (dy.data(), cache.xhat.data());
    let mut dgamma = vec![0.0; f];
    let mut dbeta = vec![0.0; f];
    for bi in 0..b {
        for fi in 0..f {
            let r = (bi * f + fi) * s..(bi * f + fi + 1) * s;
            for (d, x) in dyd[r.clone()].iter().zip(&xh[r]) {
                dbeta[fi] += d;
                dgamma[fi] += d * x;
            }
        }
    }
    let mut dx = vec![0.0; dyd.len()];
    for bi in 0..b {
        for fi in 0..f {
            let r = (bi * f + fi) * s..(bi * f + fi + 1) * s;
            let scale = gamma[fi] * cache.inv_std[fi];
            if cache.train {
                let (sd, sdx) = (dbeta[fi], dgamma[fi]);
                for ((o, d), x) in dx[r.clone()].iter_mut().zip(&dyd[r.clone()]).zip(&xh[r]) {
                    *o = scale / n * (n * d - sd - x * sdx);
                }
            } else {
                for (o, d) in dx[r.clone()].iter_mut().zip(&dyd[r]) {
                    *o = scale * d;
                }
            }
        }
    }
    Ok((Tensor::new(dy.shape().to_vec(), dx)?, dgamma, dbeta))
}
