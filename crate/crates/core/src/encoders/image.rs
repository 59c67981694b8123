use serde::{Deserialize, Serialize};

use crate::diff::{ConvGeom, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

use super::common::{batch_norm, conv, init_bn, init_conv, init_linear, linear, ForwardCtx};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageEncoderConfig {
    pub width: usize,
    pub height: usize,
    /// Output maps of each 3x3 stride-2 stage.
    pub widths: Vec<usize>,
    pub embedding_dim: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ImageEncoderConfig {
    fn default() -> Self {
        Self { width: 64, height: 64, widths: vec![16, 32, 64, 128], embedding_dim: 1000, bn_eps: 1e-5, bn_momentum: 0.1 }
    }
}

impl ImageEncoderConfig {
    pub fn compact() -> Self {
        Self { widths: vec![8, 16, 32, 64], embedding_dim: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.embedding_dim == 0 {
            return Err(Error::Config("image size and embedding_dim must be positive".into()));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("image encoder widths must be nonempty and positive".into()));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("bn_eps must be > 0 and bn_momentum in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One suppressible layer: its feature maps are indexed `0..features`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryLayer {
    pub layer: usize,
    pub name: String,
    pub features: usize,
}

/// Feature maps to zero in one layer's output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Suppression {
    pub layer: usize,
    pub features: Vec<usize>,
}

impl Suppression {
    pub fn single(layer: usize, feature: usize) -> Self {
        Self { layer, features: vec![feature] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEncoder {
    pub config: ImageEncoderConfig,
    pub prefix: String,
}

impl ImageEncoder {
    pub fn new(config: ImageEncoderConfig, prefix: impl Into<String>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, prefix: prefix.into() })
    }

    fn name(&self, s: &str) -> String {
        format!("{}.{s}", self.prefix)
    }

    /// Every suppressible layer, in forward order.
    pub fn registry(&self) -> Vec<RegistryLayer> {
        self.config
            .widths
            .iter()
            .enumerate()
            .map(|(l, &f)| RegistryLayer { layer: l, name: format!("stage{l}"), features: f })
            .collect()
    }

    pub fn check_suppression(&self, s: &Suppression) -> Result<()> {
        let width = self
            .config
            .widths
            .get(s.layer)
            .ok_or_else(|| Error::Model(format!("layer {} not in registry ({} layers)", s.layer, self.config.widths.len())))?;
        if let Some(f) = s.features.iter().find(|&&f| f >= *width) {
            return Err(Error::Model(format!("feature {f} not in layer {} ({width} features)", s.layer)));
        }
        Ok(())
    }

    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = stream_rng(seed, Stream::Init, 2);
        let mut p = ParamStore::new();
        let mut cin = 3;
        for (l, &w) in self.config.widths.iter().enumerate() {
            init_conv(&mut p, &mut rng, &self.name(&format!("stage{l}")), [w, cin, 3, 3])?;
            init_bn(&mut p, &self.name(&format!("stage{l}_bn")), w)?;
            cin = w;
        }
        init_linear(&mut p, &mut rng, &self.name("fc"), self.config.embedding_dim, cin)?;
        Ok(p)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != c.height || shape[3] != c.width {
            return Err(Error::shape(
                "image_encode",
                format!("expected [B, 3, {}, {}], got {shape:?}", c.height, c.width),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        self.forward_suppressed(tape, params, x, ctx, None)
    }

    /// Forward pass with the listed feature maps of one stage zeroed right
    /// after that stage's activation.
    pub fn forward_suppressed(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        x: Var,
        ctx: &mut ForwardCtx,
        suppress: Option<&Suppression>,
    ) -> Result<Var> {
        self.check_input(tape.shape(x))?;
        if let Some(s) = suppress {
            self.check_suppression(s)?;
        }
        let geom = ConvGeom::new((2, 2), (1, 1), (1, 1));
        let mut h = x;
        for l in 0..self.config.widths.len() {
            h = conv(tape, params, &self.name(&format!("stage{l}")), h, geom)?;
            h = batch_norm(tape, params, ctx, &self.name(&format!("stage{l}_bn")), h, self.config.bn_eps)?;
            h = tape.relu(h)?;
            if let Some(s) = suppress.filter(|s| s.layer == l) {
                for &f in &s.features {
                    h = tape.zero_feature(h, f)?;
                }
            }
        }
        let pooled = tape.global_avg_pool(h)?;
        linear(tape, params, &self.name("fc"), pooled)
    }

    pub fn embed(&self, params: &ParamStore, batch: Tensor) -> Result<Tensor> {
        self.embed_suppressed(params, batch, None)
    }

    pub fn embed_suppressed(&self, params: &ParamStore, batch: Tensor, suppress: Option<&Suppression>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.input(batch)?;
        let y = self.forward_suppressed(&mut tape, params, x, &mut ForwardCtx::eval(), suppress)?;
        Ok(tape.value(y).clone())
    }
}
