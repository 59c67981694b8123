use serde::{Deserialize, Serialize};

use crate::diff::ParamStore;
use crate::encoders::{image_batch, JointModel, Suppression};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::joint::compatibility;
use crate::par;
use crate::rng::{derive_seed, Stream};
use crate::signal::{filtered_gaussian_noise, mean_var, EegSegment, REPLACEMENT_CUTOFF_HZ};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportanceConfig {
    /// Monte-Carlo replacements per channel.
    pub replacements: usize,
    pub cutoff_hz: f64,
    pub seed: u64,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        Self { replacements: 32, cutoff_hz: REPLACEMENT_CUTOFF_HZ, seed: 0 }
    }
}

impl ImportanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replacements == 0 {
            return Err(Error::Analysis("need at least one replacement".into()));
        }
        Ok(())
    }
}

/// Seed of replacement `r` of channel `c`. Shared by every pair so that
/// importance differences across pairs are not Monte-Carlo noise.
pub fn replacement_seed(seed: u64, channel: usize, r: usize) -> u64 {
    derive_seed(seed, Stream::Replacement, ((channel as u64) << 32) | r as u64)
}

/// `e` with row `channel` replaced by low-pass filtered Gaussian noise that
/// matches the row's mean and variance.
pub fn replace_channel(e: &EegSegment, channel: usize, r: usize, cfg: &ImportanceConfig) -> Result<EegSegment> {
    if channel >= e.channels {
        return Err(Error::Analysis(format!("channel {channel} outside {} channels", e.channels)));
    }
    let (mu, var) = mean_var(e.channel(channel));
    if !(var > 0.0) {
        return Err(Error::Analysis(format!("channel {channel} is constant; replacement noise undefined")));
    }
    let noise =
        filtered_gaussian_noise(mu, var, e.samples, e.sample_rate, cfg.cutoff_hz, replacement_seed(cfg.seed, channel, r))?;
    let mut out = e.clone();
    out.channel_mut(channel).copy_from_slice(&noise);
    Ok(out)
}

/// Embedding shifts `phi(e) - phi(e with channel replaced)` for replacements
/// `r_start .. r_start + count`, one row each.
pub fn replacement_shifts(
    model: &JointModel,
    params: &ParamStore,
    e: &EegSegment,
    e_emb: &[f64],
    channel: usize,
    r_start: usize,
    count: usize,
    cfg: &ImportanceConfig,
) -> Result<Vec<Vec<f64>>> {
    let replaced = (r_start..r_start + count).map(|r| replace_channel(e, channel, r, cfg)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&EegSegment> = replaced.iter().collect();
    let embs = model.embed_eeg(params, &refs)?;
    Ok(embs.into_iter().map(|x| e_emb.iter().zip(&x).map(|(a, b)| a - b).collect()).collect())
}

/// Mean embedding shift of each channel, `C x D`: the part of channel
/// importance that depends only on the EEG. `I(e, v, c)` is its dot product
/// with `theta(v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelShifts {
    pub e_emb: Vec<f64>,
    pub shifts: Vec<Vec<f64>>,
}

impl ChannelShifts {
    pub fn compute(
        model: &JointModel,
        params: &ParamStore,
        e: &EegSegment,
        channels: &[usize],
        cfg: &ImportanceConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let e_emb = model.embed_eeg(params, &[e])?.remove(0);
        let r = cfg.replacements;
        let shifts = par::try_map_slice(channels, |&c| {
            let rows = replacement_shifts(model, params, e, &e_emb, c, 0, r, cfg)?;
            let mut mean = vec![0.0; e_emb.len()];
            for row in &rows {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            Ok::<_, Error>(mean.into_iter().map(|m| m / r as f64).collect())
        })?;
        Ok(Self { e_emb, shifts })
    }

    /// `I(e, v, c)` for every computed channel, given `theta(v)`.
    pub fn importance(&self, v_emb: &[f64]) -> Result<Vec<f64>> {
        self.shifts.iter().map(|s| compatibility(s, v_emb)).collect()
    }
}

/// Per-channel importance scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelImportanceMap {
    pub scores: Vec<f64>,
    pub replacements: usize,
    pub seed: u64,
    pub pairs: usize,
}

/// `I(e, v, c) = F(e, v) - mean_r F(e_r^c, v)`.
pub fn channel_importance(
    model: &JointModel,
    params: &ParamStore,
    e: &EegSegment,
    v: &Image,
    channel: usize,
    cfg: &ImportanceConfig,
) -> Result<f64> {
    let v_emb = model.embed_images(params, &[v])?.remove(0);
    let shifts = ChannelShifts::compute(model, params, e, &[channel], cfg)?;
    Ok(shifts.importance(&v_emb)?[0])
}

/// Mean of `I(e, v, c)` over pairs, for every channel.
pub fn global_channel_importance(
    model: &JointModel,
    params: &ParamStore,
    pairs: &[(&EegSegment, &Image)],
    cfg: &ImportanceConfig,
) -> Result<ChannelImportanceMap> {
    let first = pairs.first().ok_or_else(|| Error::Analysis("channel importance over an empty pair set".into()))?;
    let channels: Vec<usize> = (0..first.0.channels).collect();
    let mut total = vec![0.0; channels.len()];
    for (e, v) in pairs {
        let v_emb = model.embed_images(params, &[v])?.remove(0);
        let scores = ChannelShifts::compute(model, params, e, &channels, cfg)?.importance(&v_emb)?;
        for (t, s) in total.iter_mut().zip(scores) {
            *t += s;
        }
    }
    Ok(ChannelImportanceMap {
        scores: total.into_iter().map(|t| t / pairs.len() as f64).collect(),
        replacements: cfg.replacements,
        seed: cfg.seed,
        pairs: pairs.len(),
    })
}

/// Channel-by-layer association scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationMatrix {
    /// `values[c][l]`.
    pub values: Vec<Vec<f64>>,
    pub channels: usize,
    pub layers: usize,
    /// `per_feature[l][f][c]`, kept when only one pair was analysed.
    pub per_feature: Option<Vec<Vec<Vec<f64>>>>,
    pub pairs: usize,
}

/// Image embeddings with each feature of each registry layer suppressed,
/// `[l][f] -> theta(v_{-l,f})`.
pub fn suppressed_embeddings(model: &JointModel, params: &ParamStore, v: &Image) -> Result<Vec<Vec<Vec<f64>>>> {
    let registry = model.image.registry();
    let jobs: Vec<(usize, usize)> =
        registry.iter().flat_map(|l| (0..l.features).map(move |f| (l.layer, f))).collect();
    let batch = image_batch(&[v])?;
    let embs = par::try_map_slice(&jobs, |&(l, f)| {
        let t = model.image.embed_suppressed(params, batch.clone(), Some(&Suppression::single(l, f)))?;
        Ok::<_, Error>(t.into_data())
    })?;
    let mut out: Vec<Vec<Vec<f64>>> = registry.iter().map(|l| Vec::with_capacity(l.features)).collect();
    for ((l, _), e) in jobs.into_iter().zip(embs) {
        out[l].push(e);
    }
    Ok(out)
}

/// `A(e, v, c, l, f) = I(e, v_{-l,f}, c) - I(e, v, c)` for all channels and
/// registry features, as `[l][f][c]`.
pub fn association(
    model: &JointModel,
    params: &ParamStore,
    e: &EegSegment,
    v: &Image,
    cfg: &ImportanceConfig,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let channels: Vec<usize> = (0..e.channels).collect();
    let shifts = ChannelShifts::compute(model, params, e, &channels, cfg)?;
    association_from_shifts(model, params, &shifts, v)
}

pub fn association_from_shifts(
    model: &JointModel,
    params: &ParamStore,
    shifts: &ChannelShifts,
    v: &Image,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let base = shifts.importance(&model.embed_images(params, &[v])?.remove(0))?;
    let suppressed = suppressed_embeddings(model, params, v)?;
    suppressed
        .iter()
        .map(|layer| {
            layer
                .iter()
                .map(|emb| {
                    let i = shifts.importance(emb)?;
                    Ok(i.iter().zip(&base).map(|(a, b)| a - b).collect())
                })
                .collect()
        })
        .collect()
}

/// `A(e, v, c, l)`: mean over the features of each layer, as `[c][l]`.
pub fn association_layer(per_feature: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let channels = per_feature.first().and_then(|l| l.first()).map_or(0, Vec::len);
    (0..channels)
        .map(|c| {
            per_feature
                .iter()
                .map(|layer| layer.iter().map(|f| f[c]).sum::<f64>() / layer.len() as f64)
                .collect()
        })
        .collect()
}

/// `A(c, l)`: the layer association averaged over pairs.
pub fn association_global(
    model: &JointModel,
    params: &ParamStore,
    pairs: &[(&EegSegment, &Image)],
    cfg: &ImportanceConfig,
) -> Result<AssociationMatrix> {
    if pairs.is_empty() {
        return Err(Error::Analysis("association over an empty pair set".into()));
    }
    let layers = model.image.registry().len();
    let mut sum: Option<Vec<Vec<f64>>> = None;
    let mut last = None;
    for (e, v) in pairs {
        let per_feature = association(model, params, e, v, cfg)?;
        let layer = association_layer(&per_feature);
        match &mut sum {
            None => sum = Some(layer),
            Some(s) => {
                for (row, add) in s.iter_mut().zip(&layer) {
                    for (a, b) in row.iter_mut().zip(add) {
                        *a += b;
                    }
                }
            }
        }
        last = Some(per_feature);
    }
    let n = pairs.len() as f64;
    let values: Vec<Vec<f64>> =
        sum.expect("nonempty").into_iter().map(|row| row.into_iter().map(|v| v / n).collect()).collect();
    Ok(AssociationMatrix {
        channels: values.len(),
        layers,
        values,
        per_feature: if pairs.len() == 1 { last } else { None },
        pairs: pairs.len(),
    })
}
