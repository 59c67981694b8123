use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use crate::analysis::{
    association_global, classifier_saliency, global_channel_importance, labeled_csv, render_scalp_map, saliency,
    saliency_metrics, write_saliency, write_text, Fixation, SaliencyMap, ScalpLayout,
};
use crate::datagen::{generate, Dataset, DatasetManifest, PlantedTruth, Split, CONFIG_FILE, MANIFEST_FILE};
use crate::diff::ParamStore;
use crate::encoders::{argmax, load_model, save_model, Architecture, EegClassifier, ImageClassifier, JointModel};
use crate::error::{Error, Result};
use crate::image::{encode_pgm, read_pgm, write_pgm};
use crate::joint::{embed_classify, train_eeg_classifier, train_joint, Modality, TrainConfig};
use crate::par;
use crate::signal::{ablation_bands, ablation_windows, preprocess, read_eegb, write_eegb};

use super::config::RunConfig;
use super::{Cli, Command};

pub const PREPROCESSED_MARKER: &str = "preprocessed.json";

pub(super) fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let c = cli.common;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(j) = c.jobs {
        cfg.jobs = j;
    }
    cfg.data_dir = c.data_dir.or(cfg.data_dir);
    cfg.out = c.out.or(cfg.out);
    cfg.checkpoint = c.checkpoint.or(cfg.checkpoint);
    let cfg = cfg.resolve()?;
    let out = cfg.out.clone().ok_or_else(|| Error::InvalidArgument("--out is required".into()))?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_text(&out.join("resolved_config.json"), &serde_json::to_string_pretty(&cfg)?)?;
    let report = par::with_jobs(cfg.jobs, || dispatch(&cli.command, &cfg, &out))?;
    write_text(&out.join("report.json"), &serde_json::to_string_pretty(&report)?)
}

fn dispatch(command: &Command, cfg: &RunConfig, out: &Path) -> Result<Value> {
    match command {
        Command::GenData => gen_data(cfg, out),
        Command::Preprocess => preprocess_dir(cfg, out),
        Command::TrainEeg => train_eeg(cfg, out),
        Command::TrainJoint => train_joint_cmd(cfg, out),
        Command::EvalClassify => eval_classify(cfg),
        Command::Saliency { pair, baseline } => saliency_cmd(cfg, out, *pair, baseline.as_deref()),
        Command::ChannelImportance { class } => channel_importance_cmd(cfg, out, *class),
        Command::Association { pair } => association_cmd(cfg, out, *pair),
        Command::RenderMap { scores } => render_map(cfg, out, scores),
        Command::Metrics { map, pair } => metrics_cmd(cfg, map, *pair),
        Command::AblateBands => ablate(cfg, out, Ablation::Bands),
        Command::AblateWindows => ablate(cfg, out, Ablation::Windows),
    }
}

fn data_dir(cfg: &RunConfig) -> Result<&Path> {
    cfg.data_dir.as_deref().ok_or_else(|| Error::InvalidArgument("--data-dir is required".into()))
}

fn checkpoint(cfg: &RunConfig) -> Result<(Architecture, ParamStore)> {
    let p = cfg.checkpoint.as_deref().ok_or_else(|| Error::InvalidArgument("--checkpoint is required".into()))?;
    load_model(p)
}

fn joint_checkpoint(cfg: &RunConfig) -> Result<(JointModel, ParamStore)> {
    let (arch, params) = checkpoint(cfg)?;
    Ok((JointModel::from_architecture(&arch)?, params))
}

/// Loads a dataset, preprocessing raw EEG unless the directory carries the
/// preprocessed marker. Band/window restriction of the training config is
/// applied.
fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = data_dir(cfg)?;
    let ds = if dir.join(PREPROCESSED_MARKER).exists() {
        Dataset::load(dir, None)?
    } else {
        Dataset::load(dir, Some(&cfg.prep))?
    };
    ds.restricted(cfg.train.band.as_ref(), cfg.train.window.as_ref())
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let (manifest, truth) = generate(&cfg.generator, out)?;
    Ok(json!({
        "command": "gen-data",
        "segments": manifest.rows.len(),
        "images": truth.images.len(),
        "config_hash": manifest.config_hash,
    }))
}

fn copy(src: &Path, dst: &Path) -> Result<()> {
    if let Some(d) = dst.parent() {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    fs::copy(src, dst).map_err(|e| Error::io(src, e))?;
    Ok(())
}

fn preprocess_dir(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let dir = data_dir(cfg)?;
    if dir.join(PREPROCESSED_MARKER).exists() {
        return Err(Error::InvalidArgument(format!("{} is already preprocessed", dir.display())));
    }
    if fs::canonicalize(dir).ok() == fs::canonicalize(out).ok() {
        return Err(Error::InvalidArgument("--out must differ from --data-dir".into()));
    }
    let manifest = DatasetManifest::load(&dir.join(MANIFEST_FILE))?;
    let rows: Vec<_> = manifest.rows.iter().chain(&manifest.held_out).collect();
    par::try_map_slice(&rows, |r| {
        let seg = preprocess(&read_eegb(&dir.join(&r.segment))?, &cfg.prep)?;
        let dst = out.join(&r.segment);
        if let Some(d) = dst.parent() {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        write_eegb(&dst, &seg)
    })?;
    let mut images: Vec<&str> = rows.iter().map(|r| r.image.as_str()).collect();
    images.sort_unstable();
    images.dedup();
    for img in &images {
        copy(&dir.join(img), &out.join(img))?;
    }
    for f in [MANIFEST_FILE, manifest.truth_file.as_str(), CONFIG_FILE] {
        if dir.join(f).exists() {
            copy(&dir.join(f), &out.join(f))?;
        }
    }
    write_text(&out.join(PREPROCESSED_MARKER), &serde_json::to_string_pretty(&cfg.prep)?)?;
    Ok(json!({ "command": "preprocess", "segments": rows.len(), "images": images.len() }))
}

fn train_eeg(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let ds = load_dataset(cfg)?;
    let plain = TrainConfig { band: None, window: None, ..cfg.train.clone() };
    let r = train_eeg_classifier(&ds, &plain)?;
    save_model(&out.join("eeg_classifier.nve"), &r.model.architecture(), &r.params)?;
    Ok(json!({ "command": "train-eeg", "checkpoint": "eeg_classifier.nve", "training": r.report }))
}

fn train_joint_cmd(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let ds = load_dataset(cfg)?;
    let plain = TrainConfig { band: None, window: None, ..cfg.train.clone() };
    let r = train_joint(&ds, &plain)?;
    save_model(&out.join("joint.nve"), &r.model.architecture(), &r.params)?;
    Ok(json!({ "command": "train-joint", "checkpoint": "joint.nve", "training": r.report }))
}

fn split_accuracy(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    if probs.is_empty() {
        return f64::NAN;
    }
    probs.iter().zip(labels).filter(|(p, l)| argmax(p) == **l).count() as f64 / probs.len() as f64
}

fn eval_classify(cfg: &RunConfig) -> Result<Value> {
    let (arch, params) = checkpoint(cfg)?;
    let ds = load_dataset(cfg)?;
    let plain = TrainConfig { band: None, window: None, ..cfg.train.clone() };
    match &arch {
        Architecture::Joint { .. } => {
            let model = JointModel::from_architecture(&arch)?;
            let eeg = embed_classify(&ds, &model, &params, Modality::Eeg, &plain)?;
            let image = embed_classify(&ds, &model, &params, Modality::Image, &plain)?;
            Ok(json!({ "command": "eval-classify", "eeg": eeg.report, "image": image.report }))
        }
        Architecture::EegClassifier { .. } => {
            let model = EegClassifier::from_architecture(&arch)?;
            let mut res = serde_json::Map::new();
            for (name, split) in [("train", Split::Train), ("val", Split::Val), ("test", Split::Test)] {
                let idx = ds.indices(split);
                let segs: Vec<_> = idx.iter().map(|&i| &ds.eeg[i]).collect();
                let probs = if segs.is_empty() { Vec::new() } else { model.classify(&params, &segs)? };
                let labels: Vec<usize> = idx.iter().map(|&i| ds.samples[i].class).collect();
                res.insert(format!("{name}_accuracy"), json!(split_accuracy(&probs, &labels)));
            }
            res.insert("chance".into(), json!(1.0 / model.head.classes as f64));
            res.insert("command".into(), json!("eval-classify"));
            Ok(Value::Object(res))
        }
        Architecture::ImageClassifier { .. } => {
            let model = ImageClassifier::from_architecture(&arch)?;
            let idx = ds.image_indices(Split::Test);
            let imgs: Vec<_> = idx.iter().map(|&i| &ds.images[i]).collect();
            let probs = if imgs.is_empty() { Vec::new() } else { model.classify(&params, &imgs)? };
            let labels: Vec<usize> = idx.iter().map(|&i| ds.image_classes[i]).collect();
            Ok(json!({ "command": "eval-classify", "test_accuracy": split_accuracy(&probs, &labels) }))
        }
    }
}

/// Dataset rows visited by the analysis commands.
fn select_pairs(ds: &Dataset, cfg: &RunConfig, pair: Option<usize>, class: Option<usize>) -> Result<Vec<usize>> {
    if let Some(p) = pair {
        if p >= ds.samples.len() {
            return Err(Error::InvalidArgument(format!("pair {p} outside the {}-row dataset", ds.samples.len())));
        }
        return Ok(vec![p]);
    }
    let class = class.or(cfg.pairs.class);
    let rows: Vec<usize> = ds
        .indices(cfg.pairs.split)
        .into_iter()
        .filter(|&i| class.map_or(true, |k| ds.samples[i].class == k))
        .take(cfg.pairs.max_pairs)
        .collect();
    if rows.is_empty() {
        return Err(Error::Analysis("no dataset rows match the pair selection".into()));
    }
    Ok(rows)
}

fn truth(ds: &Dataset) -> Result<&PlantedTruth> {
    ds.truth.as_ref().ok_or_else(|| Error::Analysis("dataset has no planted truth".into()))
}

/// Planted patch center of every image, indexed like `ds.images`.
fn patch_centers(ds: &Dataset) -> Result<Vec<Fixation>> {
    let t = truth(ds)?;
    ds.image_files
        .iter()
        .map(|f| {
            t.image(f).map(|it| it.patch.center()).ok_or_else(|| Error::Analysis(format!("no planted truth for {f}")))
        })
        .collect()
}

/// Metrics of one map against its image's planted patch. Negatives for the
/// shuffled AUC are the patch centers of the other images of the split.
fn planted_metrics(ds: &Dataset, cfg: &RunConfig, row: usize, map: &[f64], width: usize, height: usize) -> Result<Value> {
    let img = ds.samples[row].image;
    let centers = patch_centers(ds)?;
    let t = truth(ds)?;
    let patch = t.image(&ds.image_files[img]).expect("checked by patch_centers").patch;
    let split = ds.samples[row].split.unwrap_or(cfg.pairs.split);
    let others: Vec<Fixation> = ds.image_indices(split).into_iter().filter(|&j| j != img).map(|j| centers[j]).collect();
    let mask: Vec<f64> =
        (0..width * height).map(|i| if patch.contains(i % width, i / width) { 1.0 } else { 0.0 }).collect();
    let (mut inside, mut outside, mut n_in) = (0.0, 0.0, 0usize);
    for (v, m) in map.iter().zip(&mask) {
        if *m > 0.0 {
            inside += v;
            n_in += 1;
        } else {
            outside += v;
        }
    }
    let inside = inside / n_in.max(1) as f64;
    let outside = outside / (map.len() - n_in).max(1) as f64;
    let constant = map.iter().all(|v| *v == map[0]);
    let m = if others.is_empty() || constant {
        None
    } else {
        Some(saliency_metrics(map, width, height, &[centers[img]], &others, Some(&mask), cfg.metrics_splits, cfg.seed)?)
    };
    Ok(json!({
        "row": row,
        "image": ds.image_files[img],
        "mean_inside": inside,
        "mean_outside": outside,
        "metrics": m,
    }))
}

fn mean_of(records: &[Value], pointer: &str) -> Option<f64> {
    let v: Vec<f64> = records.iter().filter_map(|r| r.pointer(pointer).and_then(Value::as_f64)).collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn summarize(records: &[Value]) -> Value {
    json!({
        "pairs": records.len(),
        "mean_inside": mean_of(records, "/mean_inside"),
        "mean_outside": mean_of(records, "/mean_outside"),
        "nss": mean_of(records, "/metrics/nss"),
        "s_auc": mean_of(records, "/metrics/s_auc"),
        "cc": mean_of(records, "/metrics/cc"),
    })
}

fn saliency_cmd(cfg: &RunConfig, out: &Path, pair: Option<usize>, baseline: Option<&Path>) -> Result<Value> {
    let (model, params) = joint_checkpoint(cfg)?;
    let ds = load_dataset(cfg)?;
    let rows = select_pairs(&ds, cfg, pair, None)?;
    let base_model = baseline
        .map(|p| {
            let (arch, params) = load_model(p)?;
            Ok::<_, Error>((ImageClassifier::from_architecture(&arch)?, params))
        })
        .transpose()?;
    let has_truth = ds.truth.is_some();
    let mut records = Vec::new();
    let mut baseline_records = Vec::new();
    for &row in &rows {
        let img = &ds.images[ds.samples[row].image];
        let map = saliency(&model, &params, &ds.eeg[row], img, &cfg.saliency)?;
        let dir = out.join(format!("pair_{row}"));
        write_saliency(&dir, &map)?;
        let mut record = if has_truth {
            planted_metrics(&ds, cfg, row, &map.values, map.width, map.height)?
        } else {
            json!({ "row": row })
        };
        record["degenerate"] = json!(map.degenerate);
        records.push(record);
        if let Some((clf, cp)) = &base_model {
            let bmap: SaliencyMap = classifier_saliency(clf, cp, img, ds.samples[row].class, &cfg.saliency)?;
            write_saliency(&dir.join("baseline"), &bmap)?;
            if has_truth {
                baseline_records.push(planted_metrics(&ds, cfg, row, &bmap.values, bmap.width, bmap.height)?);
            }
        }
    }
    Ok(json!({
        "command": "saliency",
        "scales": cfg.saliency.scales,
        "stride": cfg.saliency.stride,
        "summary": summarize(&records),
        "pairs": records,
        "baseline": if base_model.is_some() { Some(summarize(&baseline_records)) } else { None },
    }))
}

fn layout(cfg: &RunConfig) -> Result<ScalpLayout> {
    match &cfg.scalp.layout {
        Some(p) => ScalpLayout::load(p),
        None => Ok(ScalpLayout::standard_128()),
    }
}

fn channel_importance_cmd(cfg: &RunConfig, out: &Path, class: Option<usize>) -> Result<Value> {
    let (model, params) = joint_checkpoint(cfg)?;
    let ds = load_dataset(cfg)?;
    let rows = select_pairs(&ds, cfg, None, class)?;
    let pairs: Vec<_> = rows.iter().map(|&i| (&ds.eeg[i], &ds.images[ds.samples[i].image])).collect();
    let map = global_channel_importance(&model, &params, &pairs, &cfg.importance)?;
    let lay = layout(cfg)?;
    let names: Vec<String> = (0..map.scores.len())
        .map(|c| lay.electrodes.get(c).map_or_else(|| format!("ch{c}"), |e| e.name.clone()))
        .collect();
    let mut csv = String::from("channel,name,score\n");
    for (c, s) in map.scores.iter().enumerate() {
        csv.push_str(&format!("{c},{},{s}\n", names[c]));
    }
    write_text(&out.join("channel_importance.csv"), &csv)?;
    if lay.len() == map.scores.len() {
        let scalp = render_scalp_map(&map.scores, &lay, cfg.scalp.size, cfg.scalp.sigma)?;
        write_pgm(&out.join("scalp.pgm"), &scalp.values, scalp.size, scalp.size, false)?;
    }
    let mut order: Vec<usize> = (0..map.scores.len()).collect();
    order.sort_by(|&a, &b| map.scores[b].total_cmp(&map.scores[a]).then(a.cmp(&b)));
    let class = class.or(cfg.pairs.class);
    let precision = match (class, ds.truth.as_ref()) {
        (Some(k), Some(t)) if k < t.classes.len() => {
            let planted = &t.classes[k].active_channels;
            let q = planted.len();
            Some(order[..q].iter().filter(|c| planted.contains(c)).count() as f64 / q as f64)
        }
        _ => None,
    };
    Ok(json!({
        "command": "channel-importance",
        "pairs": map.pairs,
        "replacements": map.replacements,
        "class": class,
        "scores": map.scores,
        "ranking": order,
        "precision_at_planted": precision,
    }))
}

fn association_cmd(cfg: &RunConfig, out: &Path, pair: Option<usize>) -> Result<Value> {
    let (model, params) = joint_checkpoint(cfg)?;
    let ds = load_dataset(cfg)?;
    let rows = select_pairs(&ds, cfg, pair, None)?;
    let pairs: Vec<_> = rows.iter().map(|&i| (&ds.eeg[i], &ds.images[ds.samples[i].image])).collect();
    let m = association_global(&model, &params, &pairs, &cfg.importance)?;
    let registry = model.image.registry();
    let mut header = vec!["channel".to_string()];
    header.extend(registry.iter().map(|l| l.name.clone()));
    let body: Vec<(String, Vec<f64>)> = m.values.iter().enumerate().map(|(c, r)| (c.to_string(), r.clone())).collect();
    write_text(&out.join("association.csv"), &labeled_csv(&header, &body))?;
    Ok(json!({ "command": "association", "pairs": m.pairs, "layers": registry, "matrix": m.values }))
}

fn render_map(cfg: &RunConfig, out: &Path, scores: &Path) -> Result<Value> {
    let text = fs::read_to_string(scores).map_err(|e| Error::io(scores, e))?;
    let values = text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let last = l.rsplit(',').next().unwrap_or_default().trim();
            last.parse::<f64>().map_err(|_| Error::format(scores, format!("bad score {last:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let lay = layout(cfg)?;
    let map = render_scalp_map(&values, &lay, cfg.scalp.size, cfg.scalp.sigma)?;
    let bytes = encode_pgm(&map.values, map.size, map.size, false)?;
    let path = out.join("scalp.pgm");
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(json!({ "command": "render-map", "channels": values.len(), "size": map.size, "sigma": cfg.scalp.sigma }))
}

fn read_map(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    if path.extension().is_some_and(|e| e == "pgm") {
        return read_pgm(path);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| Error::format(path, format!("bad value {v:?}"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let width = rows.first().map_or(0, Vec::len);
    if width == 0 || rows.iter().any(|r| r.len() != width) {
        return Err(Error::format(path, "ragged or empty map"));
    }
    let height = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let (min, max) = flat.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let norm = if max > min { flat.iter().map(|v| (v - min) / (max - min)).collect() } else { vec![0.0; flat.len()] };
    Ok((norm, width, height))
}

fn metrics_cmd(cfg: &RunConfig, map: &Path, pair: usize) -> Result<Value> {
    let ds = load_dataset(cfg)?;
    if pair >= ds.samples.len() {
        return Err(Error::InvalidArgument(format!("pair {pair} outside the {}-row dataset", ds.samples.len())));
    }
    let (values, w, h) = read_map(map)?;
    let img = &ds.images[ds.samples[pair].image];
    if (w, h) != (img.width, img.height) {
        return Err(Error::Analysis(format!("{w}x{h} map for a {}x{} image", img.width, img.height)));
    }
    let mut r = planted_metrics(&ds, cfg, pair, &values, w, h)?;
    r["command"] = json!("metrics");
    Ok(r)
}

enum Ablation {
    Bands,
    Windows,
}

fn ablate(cfg: &RunConfig, out: &Path, kind: Ablation) -> Result<Value> {
    let ds = load_dataset(cfg)?;
    let runs: Vec<(String, f64, f64, TrainConfig)> = match kind {
        Ablation::Bands => ablation_bands()
            .into_iter()
            .map(|b| (b.name.clone(), b.lo, b.hi, TrainConfig { band: Some(b), window: None, ..cfg.train.clone() }))
            .collect(),
        Ablation::Windows => ablation_windows()
            .into_iter()
            .map(|w| (w.label(), w.t0, w.t1, TrainConfig { band: None, window: Some(w), ..cfg.train.clone() }))
            .collect(),
    };
    let (label, lo, hi) = match kind {
        Ablation::Bands => ("band", "lo_hz", "hi_hz"),
        Ablation::Windows => ("window", "t0_ms", "t1_ms"),
    };
    let mut csv = format!("{label},{lo},{hi},best_epoch,val_accuracy,test_accuracy\n");
    let mut rows = Vec::new();
    for (name, a, b, tc) in runs {
        let r = train_eeg_classifier(&ds, &tc)?;
        csv.push_str(&format!("{name},{a},{b},{},{},{}\n", r.report.best_epoch, r.report.val, r.report.test));
        rows.push(json!({
            label: name, lo: a, hi: b,
            "best_epoch": r.report.best_epoch,
            "val_accuracy": r.report.val,
            "test_accuracy": r.report.test,
        }));
    }
    write_text(&out.join("table.csv"), &csv)?;
    write_text(&out.join("table.json"), &serde_json::to_string_pretty(&rows)?)?;
    let command = match kind {
        Ablation::Bands => "ablate-bands",
        Ablation::Windows => "ablate-windows",
    };
    Ok(json!({ "command": command, "rows": rows }))
}
