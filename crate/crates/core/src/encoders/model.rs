use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::{checkpoint, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::par;
use crate::signal::EegSegment;
use crate::tensor::Tensor;

use super::common::{eeg_batch, image_batch, ForwardCtx};
use super::eeg::{EegChannelNet, EegChannelNetConfig};
use super::head::{softmax_rows, LinearHead};
use super::image::{ImageEncoder, ImageEncoderConfig, RegistryLayer};

pub const EEG_PREFIX: &str = "eeg";
pub const IMAGE_PREFIX: &str = "img";
pub const HEAD_PREFIX: &str = "head";

/// Architecture descriptor stored in checkpoint headers, enough to rebuild
/// the model and enumerate its suppressible features without this code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    EegClassifier { eeg: EegChannelNetConfig, samples: usize, classes: usize },
    ImageClassifier { image: ImageEncoderConfig, classes: usize, registry: Vec<RegistryLayer> },
    Joint { eeg: EegChannelNetConfig, samples: usize, image: ImageEncoderConfig, registry: Vec<RegistryLayer> },
}

pub fn save_model(path: &Path, arch: &Architecture, params: &ParamStore) -> Result<()> {
    checkpoint::save(path, &serde_json::to_value(arch)?, params)
}

pub fn load_model(path: &Path) -> Result<(Architecture, ParamStore)> {
    let (cfg, params) = checkpoint::load(path)?;
    let arch = serde_json::from_value(cfg).map_err(|e| Error::format(path, format!("architecture: {e}")))?;
    Ok((arch, params))
}

/// Inference batch size used by the convenience wrappers.
pub const EVAL_CHUNK: usize = 16;

/// EEG-ChannelNet followed by a softmax classification layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EegClassifier {
    pub net: EegChannelNet,
    pub head: LinearHead,
}

impl EegClassifier {
    pub fn new(config: EegChannelNetConfig, samples: usize, classes: usize) -> Result<Self> {
        let d = config.embedding_dim;
        Ok(Self { net: EegChannelNet::new(config, samples, EEG_PREFIX)?, head: LinearHead::new(d, classes, HEAD_PREFIX)? })
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::EegClassifier { eeg: self.net.config.clone(), samples: self.net.samples, classes: self.head.classes }
    }

    pub fn from_architecture(arch: &Architecture) -> Result<Self> {
        match arch {
            Architecture::EegClassifier { eeg, samples, classes } => Self::new(eeg.clone(), *samples, *classes),
            other => Err(Error::Model(format!("checkpoint holds {other:?}, not an EEG classifier"))),
        }
    }

    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut p = self.net.init(seed)?;
        p.extend(self.head.init(seed)?)?;
        Ok(p)
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let e = self.net.forward(tape, params, x, ctx)?;
        self.head.forward(tape, params, e)
    }

    pub fn logits(&self, params: &ParamStore, batch: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.input(batch)?;
        let y = self.forward(&mut tape, params, x, &mut ForwardCtx::eval())?;
        Ok(tape.value(y).clone())
    }

    /// Class probabilities, one row per segment.
    pub fn classify(&self, params: &ParamStore, segments: &[&EegSegment]) -> Result<Vec<Vec<f64>>> {
        let chunks: Vec<&[&EegSegment]> = segments.chunks(EVAL_CHUNK).collect();
        let rows = par::try_map_slice(&chunks, |c| Ok::<_, Error>(softmax_rows(&self.logits(params, eeg_batch(c)?)?)))?;
        Ok(rows.into_iter().flatten().collect())
    }
}

/// Image encoder followed by a softmax classification layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageClassifier {
    pub net: ImageEncoder,
    pub head: LinearHead,
}

impl ImageClassifier {
    pub fn new(config: ImageEncoderConfig, classes: usize) -> Result<Self> {
        let d = config.embedding_dim;
        Ok(Self { net: ImageEncoder::new(config, IMAGE_PREFIX)?, head: LinearHead::new(d, classes, HEAD_PREFIX)? })
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::ImageClassifier {
            image: self.net.config.clone(),
            classes: self.head.classes,
            registry: self.net.registry(),
        }
    }

    pub fn from_architecture(arch: &Architecture) -> Result<Self> {
        match arch {
            Architecture::ImageClassifier { image, classes, .. } => Self::new(image.clone(), *classes),
            other => Err(Error::Model(format!("checkpoint holds {other:?}, not an image classifier"))),
        }
    }

    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut p = self.net.init(seed)?;
        p.extend(self.head.init(seed)?)?;
        Ok(p)
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let e = self.net.forward(tape, params, x, ctx)?;
        self.head.forward(tape, params, e)
    }

    pub fn logits(&self, params: &ParamStore, batch: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.input(batch)?;
        let y = self.forward(&mut tape, params, x, &mut ForwardCtx::eval())?;
        Ok(tape.value(y).clone())
    }

    pub fn classify(&self, params: &ParamStore, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        let chunks: Vec<&[&Image]> = images.chunks(EVAL_CHUNK).collect();
        let rows = par::try_map_slice(&chunks, |c| Ok::<_, Error>(softmax_rows(&self.logits(params, image_batch(c)?)?)))?;
        Ok(rows.into_iter().flatten().collect())
    }
}

/// The two encoders of the joint embedding, sharing one parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub eeg: EegChannelNet,
    pub image: ImageEncoder,
}

impl JointModel {
    pub fn new(eeg: EegChannelNetConfig, samples: usize, image: ImageEncoderConfig) -> Result<Self> {
        if eeg.embedding_dim != image.embedding_dim {
            return Err(Error::Config(format!(
                "EEG embedding_dim {} differs from image embedding_dim {}",
                eeg.embedding_dim, image.embedding_dim
            )));
        }
        Ok(Self { eeg: EegChannelNet::new(eeg, samples, EEG_PREFIX)?, image: ImageEncoder::new(image, IMAGE_PREFIX)? })
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::Joint {
            eeg: self.eeg.config.clone(),
            samples: self.eeg.samples,
            image: self.image.config.clone(),
            registry: self.image.registry(),
        }
    }

    pub fn from_architecture(arch: &Architecture) -> Result<Self> {
        match arch {
            Architecture::Joint { eeg, samples, image, .. } => Self::new(eeg.clone(), *samples, image.clone()),
            other => Err(Error::Model(format!("checkpoint holds {other:?}, not a joint model"))),
        }
    }

    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut p = self.eeg.init(seed)?;
        p.extend(self.image.init(seed)?)?;
        Ok(p)
    }

    pub fn embedding_dim(&self) -> usize {
        self.eeg.config.embedding_dim
    }

    /// Eval-mode EEG embeddings, one row per segment.
    pub fn embed_eeg(&self, params: &ParamStore, segments: &[&EegSegment]) -> Result<Vec<Vec<f64>>> {
        let chunks: Vec<&[&EegSegment]> = segments.chunks(EVAL_CHUNK).collect();
        let d = self.embedding_dim();
        let rows = par::try_map_slice(&chunks, |c| {
            let t = self.eeg.embed(params, eeg_batch(c)?)?;
            Ok::<_, Error>(t.data().chunks(d).map(|r| r.to_vec()).collect::<Vec<_>>())
        })?;
        Ok(rows.into_iter().flatten().collect())
    }

    pub fn embed_images(&self, params: &ParamStore, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        let chunks: Vec<&[&Image]> = images.chunks(EVAL_CHUNK).collect();
        let d = self.embedding_dim();
        let rows = par::try_map_slice(&chunks, |c| {
            let t = self.image.embed(params, image_batch(c)?)?;
            Ok::<_, Error>(t.data().chunks(d).map(|r| r.to_vec()).collect::<Vec<_>>())
        })?;
        Ok(rows.into_iter().flatten().collect())
    }
}
