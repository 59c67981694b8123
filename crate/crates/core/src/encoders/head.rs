use crate::diff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

use super::common::{init_linear, linear};

/// Linear `D -> K` layer whose softmax gives class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub input_dim: usize,
    pub classes: usize,
    pub prefix: String,
}

impl LinearHead {
    pub fn new(input_dim: usize, classes: usize, prefix: impl Into<String>) -> Result<Self> {
        if input_dim == 0 || classes < 2 {
            return Err(Error::Model(format!("head needs D >= 1 and K >= 2, got D={input_dim}, K={classes}")));
        }
        Ok(Self { input_dim, classes, prefix: prefix.into() })
    }

    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        let mut rng = stream_rng(seed, Stream::Init, 3);
        let mut p = ParamStore::new();
        init_linear(&mut p, &mut rng, &self.prefix, self.classes, self.input_dim)?;
        Ok(p)
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamStore, x: Var) -> Result<Var> {
        if !params.contains(&format!("{}.w", self.prefix)) {
            return Err(Error::Model("classifier head is not initialized".into()));
        }
        linear(tape, params, &self.prefix, x)
    }

    pub fn logits(&self, params: &ParamStore, features: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.input(features)?;
        let y = self.forward(&mut tape, params, x)?;
        Ok(tape.value(y).clone())
    }
}

/// Row-wise softmax of `[B, K]` logits.
pub fn softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        })
        .collect()
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0
}
