use rand_chacha::ChaCha8Rng;

use crate::diff::{fan_in_uniform, BatchStats, BnArgs, BnMode, ConvGeom, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::signal::EegSegment;
use crate::tensor::Tensor;

/// Per-forward state: batch-norm mode and the batch statistics collected in
/// training mode, to be folded into running estimates after the step.
#[derive(Debug)]
pub struct ForwardCtx {
    pub mode: BnMode,
    pub stats: Vec<(String, BatchStats)>,
}

impl ForwardCtx {
    pub fn train() -> Self {
        Self { mode: BnMode::Train, stats: Vec::new() }
    }

    pub fn eval() -> Self {
        Self { mode: BnMode::Eval, stats: Vec::new() }
    }

    /// `running <- (1 - momentum) * running + momentum * batch` for every
    /// collected layer.
    pub fn apply_running_updates(&self, params: &mut ParamStore, momentum: f64) -> Result<()> {
        for (prefix, s) in &self.stats {
            for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                let r = params.get_mut(&format!("{prefix}.{suffix}"))?;
                for (v, b) in r.data_mut().iter_mut().zip(batch.iter()) {
                    *v = (1.0 - momentum) * *v + momentum * b;
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn put(tape: &mut Tape, params: &ParamStore, name: &str) -> Result<Var> {
    tape.param(name, params.get(name)?.clone())
}

pub(crate) fn init_conv(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    shape: [usize; 4],
) -> Result<()> {
    let fan_in = shape[1] * shape[2] * shape[3];
    store.insert(format!("{prefix}.w"), fan_in_uniform(rng, &shape, fan_in), true)?;
    store.insert(format!("{prefix}.b"), fan_in_uniform(rng, &[shape[0]], fan_in), true)
}

pub(crate) fn init_linear(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, out: usize, inp: usize) -> Result<()> {
    store.insert(format!("{prefix}.w"), fan_in_uniform(rng, &[out, inp], inp), true)?;
    store.insert(format!("{prefix}.b"), fan_in_uniform(rng, &[out], inp), true)
}

pub(crate) fn init_bn(store: &mut ParamStore, prefix: &str, f: usize) -> Result<()> {
    store.insert(format!("{prefix}.gamma"), Tensor::full(&[f], 1.0), true)?;
    store.insert(format!("{prefix}.beta"), Tensor::zeros(&[f]), true)?;
    store.insert(format!("{prefix}.running_mean"), Tensor::zeros(&[f]), false)?;
    store.insert(format!("{prefix}.running_var"), Tensor::full(&[f], 1.0), false)
}

pub(crate) fn conv(
    tape: &mut Tape,
    params: &ParamStore,
    prefix: &str,
    x: Var,
    geom: ConvGeom,
) -> Result<Var> {
    let w = put(tape, params, &format!("{prefix}.w"))?;
    let b = put(tape, params, &format!("{prefix}.b"))?;
    tape.conv2d(x, w, Some(b), geom)
}

pub(crate) fn linear(tape: &mut Tape, params: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = put(tape, params, &format!("{prefix}.w"))?;
    let b = put(tape, params, &format!("{prefix}.b"))?;
    tape.linear(x, w, Some(b))
}

pub(crate) fn batch_norm(
    tape: &mut Tape,
    params: &ParamStore,
    ctx: &mut ForwardCtx,
    prefix: &str,
    x: Var,
    eps: f64,
) -> Result<Var> {
    let gamma = put(tape, params, &format!("{prefix}.gamma"))?;
    let beta = put(tape, params, &format!("{prefix}.beta"))?;
    let rm = params.get(&format!("{prefix}.running_mean"))?.data();
    let rv = params.get(&format!("{prefix}.running_var"))?.data();
    let (y, stats) = tape.batch_norm(x, gamma, beta, BnArgs { eps, mode: ctx.mode, running: Some((rm, rv)) })?;
    if let Some(s) = stats {
        ctx.stats.push((prefix.to_string(), s));
    }
    Ok(y)
}

/// Smallest symmetric padding giving exactly `target` outputs, if any.
pub(crate) fn padding_for(n: usize, k: usize, stride: usize, dilation: usize, target: usize) -> Option<usize> {
    let span = dilation * (k - 1) + 1;
    let mut p = 0;
    loop {
        let padded = n + 2 * p;
        if padded >= span {
            let out = (padded - span) / stride + 1;
            if out == target {
                return Some(p);
            }
            if out > target {
                return None;
            }
        }
        p += 1;
    }
}

/// `[B, 1, C, L]` from segments of equal shape.
pub fn eeg_batch(segments: &[&EegSegment]) -> Result<Tensor> {
    let first = segments.first().ok_or_else(|| Error::InvalidArgument("empty EEG batch".into()))?;
    let (c, l) = (first.channels, first.samples);
    let mut data = Vec::with_capacity(segments.len() * c * l);
    for s in segments {
        if (s.channels, s.samples) != (c, l) {
            return Err(Error::shape("eeg_batch", format!("{}x{} vs {c}x{l}", s.channels, s.samples)));
        }
        data.extend_from_slice(&s.data);
    }
    Tensor::new(vec![segments.len(), 1, c, l], data)
}

/// `[B, 3, H, W]` from images of equal size.
pub fn image_batch(images: &[&Image]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for im in images {
        if (im.width, im.height) != (w, h) {
            return Err(Error::shape("image_batch", format!("{}x{} vs {w}x{h}", im.width, im.height)));
        }
        data.extend_from_slice(&im.data);
    }
    Tensor::new(vec![images.len(), 3, h, w], data)
}
