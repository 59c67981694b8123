use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{out_extent, ConvGeom, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

use super::common::{batch_norm, conv, init_bn, init_conv, init_linear, linear, padding_for, ForwardCtx};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EegChannelNetConfig {
    pub channels: usize,
    pub temporal_dilations: Vec<usize>,
    pub temporal_kernel: usize,
    pub temporal_stride: usize,
    /// Feature maps per temporal branch.
    pub temporal_maps: usize,
    /// Channel-axis kernel heights, one spatial branch each.
    pub spatial_kernels: Vec<usize>,
    pub spatial_stride: usize,
    /// Feature maps per spatial branch.
    pub spatial_maps: usize,
    pub residual_layers: usize,
    pub final_maps: usize,
    pub embedding_dim: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for EegChannelNetConfig {
    fn default() -> Self {
        Self {
            channels: 128,
            temporal_dilations: vec![1, 2, 4, 8, 16],
            temporal_kernel: 33,
            temporal_stride: 2,
            temporal_maps: 10,
            spatial_kernels: vec![128, 64, 32, 16],
            spatial_stride: 2,
            spatial_maps: 32,
            residual_layers: 4,
            final_maps: 16,
            embedding_dim: 1000,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl EegChannelNetConfig {
    /// Same topology with narrower blocks, a coarser temporal stride and a
    /// single residual layer; used where many forward passes are needed.
    pub fn compact() -> Self {
        Self {
            temporal_stride: 4,
            temporal_maps: 2,
            spatial_maps: 2,
            residual_layers: 1,
            final_maps: 4,
            embedding_dim: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("temporal_kernel", self.temporal_kernel),
            ("temporal_stride", self.temporal_stride),
            ("temporal_maps", self.temporal_maps),
            ("spatial_stride", self.spatial_stride),
            ("spatial_maps", self.spatial_maps),
            ("final_maps", self.final_maps),
            ("embedding_dim", self.embedding_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.temporal_dilations.is_empty() || self.temporal_dilations.contains(&0) {
            return Err(Error::Config("temporal_dilations must be nonempty and positive".into()));
        }
        if self.spatial_kernels.is_empty() || self.spatial_kernels.contains(&0) {
            return Err(Error::Config("spatial_kernels must be nonempty and positive".into()));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("bn_eps must be > 0 and bn_momentum in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Intermediate extents of one input length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EegShapes {
    pub input: [usize; 3],
    pub temporal: [usize; 3],
    pub spatial: [usize; 3],
    pub residual: [usize; 3],
    pub final_conv: [usize; 3],
    pub flat: usize,
    pub embedding: usize,
    pub temporal_padding: Vec<usize>,
    pub spatial_padding: Vec<usize>,
}

/// The EEG encoder. Parameters live in a [`ParamStore`] under `prefix`.
#[derive(Debug, Clone, PartialEq)]
pub struct EegChannelNet {
    pub config: EegChannelNetConfig,
    pub samples: usize,
    pub prefix: String,
}

impl EegChannelNet {
    /// Encoder for inputs of `samples` time steps. The fully connected layer
    /// is sized for that length; everything convolutional is independent of it.
    pub fn new(config: EegChannelNetConfig, samples: usize, prefix: impl Into<String>) -> Result<Self> {
        config.validate()?;
        let net = Self { config, samples, prefix: prefix.into() };
        net.shapes(samples)?;
        Ok(net)
    }

    fn name(&self, s: &str) -> String {
        format!("{}.{s}", self.prefix)
    }

    pub fn shapes(&self, samples: usize) -> Result<EegShapes> {
        let c = &self.config;
        let lt = samples.div_ceil(c.temporal_stride);
        let temporal_padding = c
            .temporal_dilations
            .iter()
            .map(|&d| {
                padding_for(samples, c.temporal_kernel, c.temporal_stride, d, lt).ok_or_else(|| {
                    Error::Model(format!("no padding gives temporal length {lt} for dilation {d}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ch = c.channels.div_ceil(c.spatial_stride);
        let spatial_padding = c
            .spatial_kernels
            .iter()
            .map(|&k| {
                padding_for(c.channels, k, c.spatial_stride, 1, ch).ok_or_else(|| {
                    Error::Model(format!("no padding gives channel extent {ch} for kernel height {k}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let tmaps = c.temporal_dilations.len() * c.temporal_maps;
        let smaps = c.spatial_kernels.len() * c.spatial_maps;
        let fh = out_extent(ch, 3, 2, 0, 1);
        let fw = out_extent(lt, 3, 2, 0, 1);
        let (fh, fw) = match (fh, fw) {
            (Some(h), Some(w)) => (h, w),
            _ => {
                return Err(Error::Model(format!(
                    "input of {samples} samples is shorter than the receptive-field minimum \
                     (final stage sees {ch}x{lt})"
                )))
            }
        };
        Ok(EegShapes {
            input: [1, c.channels, samples],
            temporal: [tmaps, c.channels, lt],
            spatial: [smaps, ch, lt],
            residual: [smaps, ch, lt],
            final_conv: [c.final_maps, fh, fw],
            flat: c.final_maps * fh * fw,
            embedding: c.embedding_dim,
            temporal_padding,
            spatial_padding,
        })
    }

    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let c = &self.config;
        let sh = self.shapes(self.samples)?;
        let mut rng: ChaCha8Rng = stream_rng(seed, Stream::Init, 1);
        let mut p = ParamStore::new();
        for (i, _) in c.temporal_dilations.iter().enumerate() {
            init_conv(&mut p, &mut rng, &self.name(&format!("temporal.{i}")), [c.temporal_maps, 1, 1, c.temporal_kernel])?;
        }
        init_bn(&mut p, &self.name("temporal_bn"), sh.temporal[0])?;
        for (i, &k) in c.spatial_kernels.iter().enumerate() {
            init_conv(&mut p, &mut rng, &self.name(&format!("spatial.{i}")), [c.spatial_maps, sh.temporal[0], k, 1])?;
        }
        let f = sh.spatial[0];
        init_bn(&mut p, &self.name("spatial_bn"), f)?;
        for r in 0..c.residual_layers {
            for j in 0..2 {
                init_conv(&mut p, &mut rng, &self.name(&format!("residual.{r}.conv{j}")), [f, f, 3, 3])?;
                init_bn(&mut p, &self.name(&format!("residual.{r}.bn{j}")), f)?;
            }
        }
        init_conv(&mut p, &mut rng, &self.name("final"), [c.final_maps, f, 3, 3])?;
        init_bn(&mut p, &self.name("final_bn"), c.final_maps)?;
        init_linear(&mut p, &mut rng, &self.name("fc"), c.embedding_dim, sh.flat)?;
        Ok(p)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != 1 || shape[2] != self.config.channels {
            return Err(Error::shape(
                "eeg_encode",
                format!("expected [B, 1, {}, L], got {shape:?}", self.config.channels),
            ));
        }
        if shape[3] != self.samples {
            return Err(Error::shape(
                "eeg_encode",
                format!("encoder built for {} samples, got {}", self.samples, shape[3]),
            ));
        }
        Ok(())
    }

    /// Temporal block alone: `[B,1,C,L] -> [B, branches*maps, C, L_T]`, before
    /// normalization. Each channel row is filtered independently.
    pub fn temporal(&self, tape: &mut Tape, params: &ParamStore, x: Var) -> Result<Var> {
        self.check_input(tape.shape(x))?;
        let c = &self.config;
        let sh = self.shapes(self.samples)?;
        let mut branches = Vec::with_capacity(c.temporal_dilations.len());
        for (i, &d) in c.temporal_dilations.iter().enumerate() {
            let geom = ConvGeom::new((1, c.temporal_stride), (0, sh.temporal_padding[i]), (1, d));
            branches.push(conv(tape, params, &self.name(&format!("temporal.{i}")), x, geom)?);
        }
        tape.concat(&branches, 1)
    }

    /// Full encoder, `[B,1,C,L] -> [B,D]`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let t = self.temporal(tape, params, x)?;
        self.forward_from_temporal(tape, params, t, ctx)
    }

    /// Everything after the temporal convolutions.
    pub fn forward_from_temporal(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        t: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let c = &self.config;
        let sh = self.shapes(self.samples)?;
        let eps = c.bn_eps;
        let t = batch_norm(tape, params, ctx, &self.name("temporal_bn"), t, eps)?;
        let t = tape.relu(t)?;
        let mut branches = Vec::with_capacity(c.spatial_kernels.len());
        for (i, _) in c.spatial_kernels.iter().enumerate() {
            let geom = ConvGeom::new((c.spatial_stride, 1), (sh.spatial_padding[i], 0), (1, 1));
            branches.push(conv(tape, params, &self.name(&format!("spatial.{i}")), t, geom)?);
        }
        let s = tape.concat(&branches, 1)?;
        let s = batch_norm(tape, params, ctx, &self.name("spatial_bn"), s, eps)?;
        let mut h = tape.relu(s)?;
        let same = ConvGeom::new((1, 1), (1, 1), (1, 1));
        for r in 0..c.residual_layers {
            let mut y = h;
            for j in 0..2 {
                y = conv(tape, params, &self.name(&format!("residual.{r}.conv{j}")), y, same)?;
                y = batch_norm(tape, params, ctx, &self.name(&format!("residual.{r}.bn{j}")), y, eps)?;
                y = tape.relu(y)?;
            }
            h = tape.add(y, h)?;
        }
        let f = conv(tape, params, &self.name("final"), h, ConvGeom::new((2, 2), (0, 0), (1, 1)))?;
        let f = batch_norm(tape, params, ctx, &self.name("final_bn"), f, eps)?;
        let f = tape.relu(f)?;
        let b = tape.shape(f)[0];
        let flat = tape.reshape(f, &[b, sh.flat])?;
        linear(tape, params, &self.name("fc"), flat)
    }

    /// Eval-mode embeddings of a `[B,1,C,L]` batch.
    pub fn embed(&self, params: &ParamStore, batch: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.input(batch)?;
        let y = self.forward(&mut tape, params, x, &mut ForwardCtx::eval())?;
        Ok(tape.value(y).clone())
    }
}
