use std::borrow::Cow;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::mask_patch;
use crate::datagen::{Dataset, Split};
use crate::diff::{Adam, ParamStore, Tape, Var};
use crate::encoders::{
    argmax, eeg_batch, image_batch, EegChannelNetConfig, EegClassifier, ForwardCtx, ImageClassifier, JointModel, LinearHead, EVAL_CHUNK, EEG_PREFIX, IMAGE_PREFIX,
};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::par;
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

use super::config::{PretrainLabels, TrainConfig};
use super::triplet::{compatibility, sample_from, triplet_loss, Triplet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches (`NaN` for epoch 0,
    /// the untrained evaluation).
    pub loss: f64,
    pub val: f64,
    pub test: f64,
}

/// Per-epoch history plus the metrics of the best-validation epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub metric: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub val: f64,
    pub test: f64,
    pub chance: Option<f64>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().skip(1).map(|e| e.loss).collect()
    }
}

fn diverged(epoch: usize, batch: usize, err: Error) -> Error {
    match err {
        Error::NonFinite { .. } => Error::Diverged { epoch, batch, loss: f64::NAN },
        other => other,
    }
}

/// Shared optimization loop. `metric` returns (validation, test); the
/// returned parameters are those of the epoch with the highest validation
/// metric (earliest on ties; epoch 0 is the initialization).
fn fit<T: Clone>(
    cfg: &TrainConfig,
    params: ParamStore,
    momentum: f64,
    metric_name: &str,
    mut batches: impl FnMut(usize) -> Vec<Vec<T>>,
    loss_fn: impl Fn(&mut Tape, &ParamStore, &[T], &mut ForwardCtx) -> Result<Var>,
    metric: impl Fn(&ParamStore) -> Result<(f64, f64)>,
) -> Result<(ParamStore, TrainReport)> {
    let mut params = params;
    let mut adam = Adam::new(cfg.adam());
    let (val, test) = metric(&params)?;
    let mut history = vec![EpochRecord { epoch: 0, loss: f64::NAN, val, test }];
    let (mut best, mut best_epoch, mut best_val) = (params.clone(), 0, val);
    for epoch in 1..=cfg.epochs {
        adam.config.lr = cfg.lr * cfg.lr_decay.powi(epoch as i32 - 1);
        let mut total = 0.0;
        let plan = batches(epoch);
        for (bi, batch) in plan.iter().enumerate() {
            let mut tape = Tape::new();
            let mut ctx = ForwardCtx::train();
            let loss = loss_fn(&mut tape, &params, batch, &mut ctx).map_err(|e| diverged(epoch, bi, e))?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, batch: bi, loss: value });
            }
            total += value;
            let grads = tape.backward(loss)?;
            adam.step(&mut params, &grads)?;
            ctx.apply_running_updates(&mut params, momentum)?;
        }
        let (val, test) = metric(&params)?;
        history.push(EpochRecord { epoch, loss: total / plan.len().max(1) as f64, val, test });
        if val > best_val {
            best = params.clone();
            best_epoch = epoch;
            best_val = val;
        }
    }
    let chosen = &history[best_epoch];
    let report = TrainReport {
        metric: metric_name.into(),
        best_epoch,
        val: chosen.val,
        test: chosen.test,
        epochs: history.clone(),
        chance: None,
    };
    Ok((best, report))
}

/// Shuffled mini-batches of `items`; a trailing batch of one is merged into
/// the previous batch so every batch can be batch-normalized.
fn epoch_batches(items: &[usize], batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order = items.to_vec();
    order.shuffle(&mut stream_rng(seed, Stream::Shuffle, epoch as u64));
    let mut out: Vec<Vec<usize>> = order.chunks(batch).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().map(Vec::len) == Some(1) {
        let last = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").extend(last);
    }
    out
}

fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if pred.is_empty() {
        return f64::NAN;
    }
    pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / pred.len() as f64
}

/// The configured EEG encoder with its channel count taken from the data.
fn eeg_config_for(cfg: &TrainConfig, data: &Dataset) -> EegChannelNetConfig {
    let mut c = cfg.eeg_config();
    c.channels = data.eeg[0].channels;
    c
}

fn require_splits(dataset: &Dataset) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let (tr, va, te) = (dataset.indices(Split::Train), dataset.indices(Split::Val), dataset.indices(Split::Test));
    if tr.len() < 2 || va.is_empty() {
        return Err(Error::Dataset(format!(
            "training needs at least 2 train rows and 1 validation row (have {} and {})",
            tr.len(),
            va.len()
        )));
    }
    Ok((tr, va, te))
}

#[derive(Debug, Clone)]
pub struct TrainedEegClassifier {
    pub model: EegClassifier,
    pub params: ParamStore,
    pub report: TrainReport,
}

/// EEG-ChannelNet plus softmax head trained with cross-entropy on the train
/// split, optionally on band/window-restricted EEG. Reports test accuracy at
/// the best validation epoch.
pub fn train_eeg_classifier(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainedEegClassifier> {
    cfg.validate()?;
    let data = dataset.restricted(cfg.band.as_ref(), cfg.window.as_ref())?;
    let (tr, va, te) = require_splits(&data)?;
    let k = data.n_classes();
    let model = EegClassifier::new(eeg_config_for(cfg, &data), data.eeg[0].samples, k)?;
    let params = model.init(cfg.seed)?;
    let labels: Vec<usize> = data.samples.iter().map(|s| s.class).collect();
    let predict = |p: &ParamStore, idx: &[usize]| -> Result<f64> {
        if idx.is_empty() {
            return Ok(f64::NAN);
        }
        let segs: Vec<_> = idx.iter().map(|&i| &data.eeg[i]).collect();
        let pred: Vec<usize> = model.classify(p, &segs)?.iter().map(|r| argmax(r)).collect();
        Ok(accuracy(&pred, &idx.iter().map(|&i| labels[i]).collect::<Vec<_>>()))
    };
    let (params, mut report) = fit(
        cfg,
        params,
        model.net.config.bn_momentum,
        "accuracy",
        |epoch| epoch_batches(&tr, cfg.batch, cfg.seed, epoch),
        |tape, p, batch: &[usize], ctx| {
            let segs: Vec<_> = batch.iter().map(|&i| &data.eeg[i]).collect();
            let x = tape.input(eeg_batch(&segs)?)?;
            let logits = model.forward(tape, p, x, ctx)?;
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            tape.softmax_cross_entropy(logits, &y)
        },
        |p| Ok((predict(p, &va)?, predict(p, &te)?)),
    )?;
    report.chance = Some(1.0 / k as f64);
    Ok(TrainedEegClassifier { model, params, report })
}

#[derive(Debug, Clone)]
pub struct TrainedImageClassifier {
    pub model: ImageClassifier,
    pub params: ParamStore,
    pub report: TrainReport,
}

/// Image encoder plus softmax head trained on the images of the train split.
pub fn train_image_classifier(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainedImageClassifier> {
    fit_image_classifier(dataset, cfg, &dataset.image_classes, dataset.n_classes())
}

/// Per-image labels and label count for `which`.
pub fn image_labels(dataset: &Dataset, which: PretrainLabels) -> Result<(Vec<usize>, usize)> {
    match which {
        PretrainLabels::Class => Ok((dataset.image_classes.clone(), dataset.n_classes())),
        PretrainLabels::ClassVariant => {
            let truth =
                dataset.truth.as_ref().ok_or_else(|| Error::Config("class_variant labels need planted truth".into()))?;
            let variants = truth.classes.iter().map(|c| c.variants.len()).max().unwrap_or(1).max(1);
            let labels = dataset
                .image_files
                .iter()
                .map(|name| {
                    truth
                        .image(name)
                        .map(|t| t.class * variants + t.variant)
                        .ok_or_else(|| Error::Dataset(format!("image {name} missing from planted truth")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((labels, truth.classes.len() * variants))
        }
    }
}

/// Overwrites the parameters under `prefix` with those of `from`.
fn copy_prefix(from: &ParamStore, to: &mut ParamStore, prefix: &str) -> Result<()> {
    let prefix = format!("{prefix}.");
    for p in from.iter().filter(|p| p.name.starts_with(&prefix)) {
        *to.get_mut(&p.name)? = p.value.clone();
    }
    Ok(())
}

/// A zeroed negative-image square: center and side.
type Occluder = (usize, usize, usize);

fn draw_occluder(rng: &mut impl Rng, width: usize, height: usize, max_side: usize, prob: f64) -> Option<Occluder> {
    let max_side = max_side.max(3);
    (prob > 0.0 && rng.gen_bool(prob))
        .then(|| (rng.gen_range(0..width), rng.gen_range(0..height), rng.gen_range(3..=max_side)))
}

fn image_refs<'a>(images: &'a [Cow<'_, Image>]) -> Vec<&'a Image> {
    images.iter().map(|c| c.as_ref()).collect()
}

fn occluded(image: &Image, occ: Option<Occluder>) -> Result<Cow<'_, Image>> {
    match occ {
        Some((x, y, side)) => mask_patch(image, x, y, side).map(Cow::Owned),
        None => Ok(Cow::Borrowed(image)),
    }
}

fn fit_image_classifier(
    dataset: &Dataset,
    cfg: &TrainConfig,
    labels: &[usize],
    k: usize,
) -> Result<TrainedImageClassifier> {
    cfg.validate()?;
    let (tr, va, te) =
        (dataset.image_indices(Split::Train), dataset.image_indices(Split::Val), dataset.image_indices(Split::Test));
    if tr.len() < 2 || va.is_empty() {
        return Err(Error::Dataset("image classifier needs train and validation images".into()));
    }
    let model = ImageClassifier::new(cfg.image_config(), k)?;
    let params = model.init(cfg.seed)?;
    let predict = |p: &ParamStore, idx: &[usize]| -> Result<f64> {
        if idx.is_empty() {
            return Ok(f64::NAN);
        }
        let imgs: Vec<_> = idx.iter().map(|&i| &dataset.images[i]).collect();
        let pred: Vec<usize> = model.classify(p, &imgs)?.iter().map(|r| argmax(r)).collect();
        Ok(accuracy(&pred, &idx.iter().map(|&i| labels[i]).collect::<Vec<_>>()))
    };
    let (params, mut report) = fit(
        cfg,
        params,
        model.net.config.bn_momentum,
        "accuracy",
        |epoch| epoch_batches(&tr, cfg.batch, cfg.seed, epoch),
        |tape, p, batch: &[usize], ctx| {
            let imgs: Vec<_> = batch.iter().map(|&i| &dataset.images[i]).collect();
            let x = tape.input(image_batch(&imgs)?)?;
            let logits = model.forward(tape, p, x, ctx)?;
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            tape.softmax_cross_entropy(logits, &y)
        },
        |p| Ok((predict(p, &va)?, predict(p, &te)?)),
    )?;
    report.chance = Some(1.0 / k as f64);
    Ok(TrainedImageClassifier { model, params, report })
}

/// Fraction of triplets with `F(e, v_pos) > F(e, v_neg)` under eval-mode
/// encoders.
pub fn ranking_accuracy(model: &JointModel, params: &ParamStore, dataset: &Dataset, triplets: &[Triplet]) -> Result<f64> {
    if triplets.is_empty() {
        return Ok(f64::NAN);
    }
    let mut rows: Vec<usize> = triplets.iter().map(|t| t.anchor).collect();
    rows.sort_unstable();
    rows.dedup();
    let mut imgs: Vec<usize> = triplets.iter().flat_map(|t| [t.positive, t.negative]).collect();
    imgs.sort_unstable();
    imgs.dedup();
    let e = model.embed_eeg(params, &rows.iter().map(|&i| &dataset.eeg[i]).collect::<Vec<_>>())?;
    let v = model.embed_images(params, &imgs.iter().map(|&i| &dataset.images[i]).collect::<Vec<_>>())?;
    let pos = |list: &[usize], x: usize| list.binary_search(&x).expect("collected above");
    let mut hits = 0usize;
    for t in triplets {
        let ea = &e[pos(&rows, t.anchor)];
        let fp = compatibility(ea, &v[pos(&imgs, t.positive)])?;
        let fneg = compatibility(ea, &v[pos(&imgs, t.negative)])?;
        if fp > fneg {
            hits += 1;
        }
    }
    Ok(hits as f64 / triplets.len() as f64)
}

/// A training triplet with an optional occluder for its negative image.
type MaskedTriplet = (Triplet, Option<Occluder>);

/// Batch-mean triplet loss of a set of triplets, recorded on `tape`. With
/// `fixed_image_stats` the image encoder normalizes with its stored
/// statistics instead of batch statistics.
fn triplet_objective(
    model: &JointModel,
    tape: &mut Tape,
    params: &ParamStore,
    dataset: &Dataset,
    triplets: &[MaskedTriplet],
    ctx: &mut ForwardCtx,
    fixed_image_stats: bool,
) -> Result<Var> {
    let segs: Vec<_> = triplets.iter().map(|(t, _)| &dataset.eeg[t.anchor]).collect();
    let pos: Vec<_> = triplets.iter().map(|(t, _)| &dataset.images[t.positive]).collect();
    let neg = triplets.iter().map(|(t, occ)| occluded(&dataset.images[t.negative], *occ)).collect::<Result<Vec<_>>>()?;
    let x = tape.input(eeg_batch(&segs)?)?;
    let e = model.eeg.forward(tape, params, x, ctx)?;
    let mut fixed = ForwardCtx::eval();
    let image_ctx = if fixed_image_stats { &mut fixed } else { ctx };
    let xp = tape.input(image_batch(&pos)?)?;
    let vp = model.image.forward(tape, params, xp, image_ctx)?;
    let xn = tape.input(image_batch(&image_refs(&neg))?)?;
    let vn = model.image.forward(tape, params, xn, image_ctx)?;
    triplet_loss(tape, e, vp, vn)
}

/// Fixed evaluation triplets of a split, drawn once from `seed`.
pub fn evaluation_triplets(dataset: &Dataset, split: Split, count: usize, seed: u64) -> Result<Vec<Triplet>> {
    let rows = dataset.indices(split);
    let images = dataset.image_indices(split);
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let mut rng = stream_rng(seed, Stream::Batches, u64::MAX - split as u64);
    sample_from(dataset, &rows, &images, count, &mut rng)
}

#[derive(Debug, Clone)]
pub struct TrainedJoint {
    pub model: JointModel,
    pub params: ParamStore,
    pub report: TrainReport,
}

/// Trains both encoders on sampled triplets, selecting the epoch with the
/// best validation ranking accuracy. Both start from random weights unless
/// `eeg_pretrain_epochs` or `image_pretrain_epochs` ask for
/// classifier-trained encoders.
pub fn train_joint(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainedJoint> {
    cfg.validate()?;
    let data = dataset.restricted(cfg.band.as_ref(), cfg.window.as_ref())?;
    let (tr, _, _) = require_splits(&data)?;
    let train_images = data.image_indices(Split::Train);
    let model = JointModel::new(eeg_config_for(cfg, &data), data.eeg[0].samples, cfg.image_config())?;
    let mut params = model.init(cfg.seed)?;
    if cfg.eeg_pretrain_epochs > 0 {
        let pre = TrainConfig { epochs: cfg.eeg_pretrain_epochs, band: None, window: None, ..cfg.clone() };
        copy_prefix(&train_eeg_classifier(&data, &pre)?.params, &mut params, EEG_PREFIX)?;
    }
    if cfg.image_pretrain_epochs > 0 {
        let pre = TrainConfig { epochs: cfg.image_pretrain_epochs, band: None, window: None, ..cfg.clone() };
        let (labels, k) = image_labels(&data, cfg.image_pretrain_labels)?;
        let trained = fit_image_classifier(&data, &pre, &labels, k)?;
        copy_prefix(&trained.params, &mut params, IMAGE_PREFIX)?;
        for l in 0..cfg.frozen_image_stages {
            params.set_trainable(&format!("{IMAGE_PREFIX}.stage{l}."), false);
            params.set_trainable(&format!("{IMAGE_PREFIX}.stage{l}_bn."), false);
        }
    }
    let val = evaluation_triplets(&data, Split::Val, cfg.eval_triplets, cfg.seed)?;
    let test = evaluation_triplets(&data, Split::Test, cfg.eval_triplets, cfg.seed)?;
    let per_epoch = cfg.triplets_per_epoch.unwrap_or(tr.len()).max(2);
    let n_batches = per_epoch.div_ceil(cfg.batch);
    let (params, report) = fit(
        cfg,
        params,
        model.eeg.config.bn_momentum,
        "ranking_accuracy",
        |epoch| {
            let mut rng = stream_rng(cfg.seed, Stream::Batches, epoch as u64);
            let mut aug = stream_rng(cfg.seed, Stream::Augment, (1 << 32) | epoch as u64);
            let (w, h) = (model.image.config.width, model.image.config.height);
            (0..n_batches)
                .map(|_| {
                    let batch = sample_from(&data, &tr, &train_images, cfg.batch, &mut rng).expect("checked splits");
                    batch
                        .into_iter()
                        .map(|t| (t, draw_occluder(&mut aug, w, h, w.max(h) + 1, cfg.negative_occlusion)))
                        .collect()
                })
                .collect()
        },
        |tape, p, batch: &[MaskedTriplet], ctx| {
            triplet_objective(&model, tape, p, &data, batch, ctx, cfg.frozen_image_stages > 0)
        },
        |p| Ok((ranking_accuracy(&model, p, &data, &val)?, ranking_accuracy(&model, p, &data, &test)?)),
    )?;
    Ok(TrainedJoint { model, params, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Eeg,
    Image,
}

#[derive(Debug, Clone)]
pub struct EmbedClassifier {
    pub head: LinearHead,
    pub params: ParamStore,
    pub report: TrainReport,
}

/// Trains only a `D -> K` softmax layer on frozen embeddings of the train
/// split and reports test accuracy at the best validation epoch.
pub fn embed_classify(
    dataset: &Dataset,
    model: &JointModel,
    params: &ParamStore,
    modality: Modality,
    cfg: &TrainConfig,
) -> Result<EmbedClassifier> {
    cfg.validate()?;
    let data = dataset.restricted(cfg.band.as_ref(), cfg.window.as_ref())?;
    let (features, labels, tr, va, te) = match modality {
        Modality::Eeg => {
            let (tr, va, te) = require_splits(&data)?;
            let segs: Vec<_> = data.eeg.iter().collect();
            let feats = model.embed_eeg(params, &segs)?;
            (feats, data.samples.iter().map(|s| s.class).collect::<Vec<_>>(), tr, va, te)
        }
        Modality::Image => {
            let imgs: Vec<_> = data.images.iter().collect();
            let feats = model.embed_images(params, &imgs)?;
            let (tr, va, te) =
                (data.image_indices(Split::Train), data.image_indices(Split::Val), data.image_indices(Split::Test));
            (feats, data.image_classes.clone(), tr, va, te)
        }
    };
    let k = data.n_classes();
    let d = model.embedding_dim();
    let head = LinearHead::new(d, k, "embed_head")?;
    let init = head.init(cfg.seed)?;
    let batch_of = |idx: &[usize]| {
        Tensor::new(vec![idx.len(), d], idx.iter().flat_map(|&i| features[i].iter().copied()).collect())
    };
    let predict = |p: &ParamStore, idx: &[usize]| -> Result<f64> {
        if idx.is_empty() {
            return Ok(f64::NAN);
        }
        let chunks: Vec<&[usize]> = idx.chunks(EVAL_CHUNK * 4).collect();
        let preds = par::try_map_slice(&chunks, |c| {
            let logits = head.logits(p, batch_of(c)?)?;
            Ok::<_, Error>(logits.data().chunks(k).map(argmax).collect::<Vec<_>>())
        })?;
        let pred: Vec<usize> = preds.into_iter().flatten().collect();
        Ok(accuracy(&pred, &idx.iter().map(|&i| labels[i]).collect::<Vec<_>>()))
    };
    let (trained, mut report) = fit(
        cfg,
        init,
        0.0,
        "accuracy",
        |epoch| epoch_batches(&tr, cfg.batch, cfg.seed, epoch),
        |tape, p, batch: &[usize], _ctx| {
            let x = tape.input(batch_of(batch)?)?;
            let logits = head.forward(tape, p, x)?;
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            tape.softmax_cross_entropy(logits, &y)
        },
        |p| Ok((predict(p, &va)?, predict(p, &te)?)),
    )?;
    report.chance = Some(1.0 / k as f64);
    Ok(EmbedClassifier { head, params: trained, report })
}
