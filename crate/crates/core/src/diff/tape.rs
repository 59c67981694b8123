//! Reverse-mode tape. Nodes are appended in execution order, which is a
//! topological order of the computation, so the backward sweep walks them in
//! reverse.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::conv::{self, ConvGeom};
use super::norm::{self, BatchStats, BnCache, BnMode};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(String),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, cache: BnCache },
    GlobalAvgPool(Var),
    RowDot(Var, Var),
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    ZeroFeature { x: Var, feature: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of a scalar with respect to every parameter recorded on a tape.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Squared L2 norm over all gradients.
    pub fn norm_sq(&self) -> f64 {
        self.map.values().flat_map(|t| t.data()).map(|g| g * g).sum()
    }
}

/// Hyperparameters of one batch-norm application.
#[derive(Debug, Clone, Copy)]
pub struct BnArgs<'a> {
    pub eps: f64,
    pub mode: BnMode,
    /// Running `(mean, var)`; required in eval mode.
    pub running: Option<(&'a [f64], &'a [f64])>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Input, "input")
    }

    /// Records a named differentiable leaf.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Result<Var> {
        self.push(value, Op::Param(name.into()), "param")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let src = self.value(a);
        let v = Tensor::new(src.shape().to_vec(), src.data().iter().map(|x| x * k).collect())?;
        self.push(v, Op::Scale(a, k), "scale")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), "mean")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let v = Tensor::new(src.shape().to_vec(), src.data().iter().map(|x| x.max(0.0)).collect())?;
        self.push(v, Op::Relu(a), "relu")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        self.push(v, Op::Reshape(a), "reshape")
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let n = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * n..(o + 1) * n]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let v = Tensor::new(shape, data)?;
        self.push(v, Op::Concat { parts: parts.to_vec(), axis }, "concat")
    }

    /// `x W^T + b` for `x: [B,N]`, `W: [M,N]`, `b: [M]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::shape("linear", format!("x {xs:?}, W {ws:?}")));
        }
        let (bsz, n, m) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [m] {
                return Err(Error::shape("linear", format!("bias {:?}, expected [{m}]", self.shape(b))));
            }
        }
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        let bd = b.map(|b| self.value(b).data());
        let mut out = vec![0.0; bsz * m];
        for i in 0..bsz {
            let xr = &xd[i * n..(i + 1) * n];
            for j in 0..m {
                let wr = &wd[j * n..(j + 1) * n];
                let dot: f64 = xr.iter().zip(wr).map(|(a, c)| a * c).sum();
                out[i * m + j] = dot + bd.map_or(0.0, |b| b[j]);
            }
        }
        let v = Tensor::new(vec![bsz, m], out)?;
        self.push(v, Op::Linear { x, w, b }, "linear")
    }

    /// 2D cross-correlation of `x: [B,Cin,H,W]` with `k: [Cout,Cin,Kh,Kw]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let v = conv::conv2d_forward(self.value(x), self.value(k), b.map(|b| self.value(b)), &geom)?;
        self.push(v, Op::Conv2d { x, w: k, b, geom }, "conv2d")
    }

    /// 1D cross-correlation of `x: [B,Cin,L]` with `k: [Cout,Cin,K]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        k: Var,
        b: Option<Var>,
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if xs.len() != 3 || ks.len() != 3 {
            return Err(Error::shape("conv1d", format!("x {xs:?}, k {ks:?}")));
        }
        let x4 = self.reshape(x, &[xs[0], xs[1], 1, xs[2]])?;
        let k4 = self.reshape(k, &[ks[0], ks[1], 1, ks[2]])?;
        let geom = ConvGeom::new((1, stride), (0, padding), (1, dilation));
        let y = self.conv2d(x4, k4, b, geom)?;
        let ys = self.shape(y).to_vec();
        self.reshape(y, &[ys[0], ys[1], ys[3]])
    }

    /// Batch normalization over axis 1. Returns the output and, in train mode,
    /// the batch statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        args: BnArgs<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (y, cache, stats) = norm::forward(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            args.running,
            args.eps,
            args.mode,
        )?;
        let v = self.push(y, Op::BatchNorm { x, gamma, beta, cache }, "batch_norm")?;
        Ok((v, stats))
    }

    /// Mean over all axes after the first two: `[B,F,...] -> [B,F]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 3 {
            return Err(Error::shape("global_avg_pool", format!("{s:?}")));
        }
        let inner: usize = s[2..].iter().product();
        let data = self.value(x).data().chunks(inner).map(|c| c.iter().sum::<f64>() / inner as f64).collect();
        let v = Tensor::new(vec![s[0], s[1]], data)?;
        self.push(v, Op::GlobalAvgPool(x), "global_avg_pool")
    }

    /// Row-wise dot product `[B,D] x [B,D] -> [B]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("row_dot", format!("{s:?}")));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let data = ad
            .chunks(s[1])
            .zip(bd.chunks(s[1]))
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
            .collect();
        self.push(Tensor::new(vec![s[0]], data)?, Op::RowDot(a, b), "row_dot")
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits {s:?}, {} labels", labels.len()),
            ));
        }
        let k = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range for {k} classes")));
        }
        let ld = self.value(logits).data();
        let mut probs = vec![0.0; ld.len()];
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &ld[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + z.ln();
            loss += lse - row[label];
            for (p, v) in probs[i * k..(i + 1) * k].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        loss /= labels.len() as f64;
        let op = Op::SoftmaxCe { logits, labels: labels.to_vec(), probs };
        self.push(Tensor::scalar(loss), op, "softmax_cross_entropy")
    }

    /// Zeroes feature map `feature` of a `[B,F,...]` value.
    pub fn zero_feature(&mut self, x: Var, feature: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || feature >= s[1] {
            return Err(Error::shape("zero_feature", format!("feature {feature} of {s:?}")));
        }
        let inner: usize = s[2..].iter().product();
        let mut v = self.value(x).clone();
        for b in 0..s[0] {
            let start = (b * s[1] + feature) * inner;
            v.data_mut()[start..start + inner].fill(0.0);
        }
        self.push(v, Op::ZeroFeature { x, feature }, "zero_feature")
    }

    /// Runs the reverse sweep from a scalar `loss`. A tape can be swept once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Backward("tape already consumed by a previous backward call".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if let Op::Param(name) = &node.op {
                let g = grads[i].take().unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                match out.map.get_mut(name) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.map.insert(name.clone(), g);
                    }
                }
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, g, &mut grads)?;
        }
        // Parameters recorded after the loss cannot influence it.
        for node in &self.nodes[loss.0 + 1..] {
            if let Op::Param(name) = &node.op {
                out.map.entry(name.clone()).or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(out)
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let like = |v: Var, data: Vec<f64>| Tensor::new(self.shape(v).to_vec(), data);
        match op {
            Op::Input | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g);
            }
            Op::Sub(a, b) => {
                acc(*b, like(*b, g.data().iter().map(|v| -v).collect())?);
                acc(*a, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, like(*a, g.data().iter().zip(bv).map(|(d, y)| d * y).collect())?);
                acc(*b, like(*b, g.data().iter().zip(av).map(|(d, x)| d * x).collect())?);
            }
            Op::Scale(a, k) => acc(*a, like(*a, g.data().iter().map(|d| d * k).collect())?),
            Op::Sum(a) => acc(*a, Tensor::full(self.shape(*a), g.data()[0])),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                acc(*a, Tensor::full(self.shape(*a), g.data()[0] / n));
            }
            Op::Relu(a) => {
                let data = g.data().iter().zip(out.data()).map(|(d, y)| if *y > 0.0 { *d } else { 0.0 }).collect();
                acc(*a, like(*a, data)?);
            }
            Op::Reshape(a) => acc(*a, g.reshape(self.shape(*a))?),
            Op::Concat { parts, axis } => {
                let shape = out.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let n = self.shape(p)[*axis] * inner;
                    let mut data = Vec::with_capacity(outer * n);
                    for o in 0..outer {
                        data.extend_from_slice(&g.data()[o * total + offset..o * total + offset + n]);
                    }
                    offset += n;
                    acc(p, like(p, data)?);
                }
            }
            Op::Linear { x, w, b } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let (bsz, n, m) = (xs[0], xs[1], ws[0]);
                let (xd, wd, gd) = (self.value(*x).data(), self.value(*w).data(), g.data());
                let mut dx = vec![0.0; bsz * n];
                let mut dw = vec![0.0; m * n];
                for i in 0..bsz {
                    for j in 0..m {
                        let gij = gd[i * m + j];
                        let wr = &wd[j * n..(j + 1) * n];
                        for (d, wv) in dx[i * n..(i + 1) * n].iter_mut().zip(wr) {
                            *d += gij * wv;
                        }
                        let xr = &xd[i * n..(i + 1) * n];
                        for (d, xv) in dw[j * n..(j + 1) * n].iter_mut().zip(xr) {
                            *d += gij * xv;
                        }
                    }
                }
                if let Some(b) = b {
                    let db = (0..m).map(|j| (0..bsz).map(|i| gd[i * m + j]).sum()).collect();
                    acc(*b, Tensor::from_vec(db));
                }
                acc(*x, like(*x, dx)?);
                acc(*w, like(*w, dw)?);
            }
            Op::Conv2d { x, w, b, geom } => {
                let need_dx = !matches!(self.nodes[x.0].op, Op::Input);
                let (dx, dw, db) = conv::conv2d_backward(self.value(*x), self.value(*w), &g, geom, need_dx)?;
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                acc(*w, dw);
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::BatchNorm { x, gamma, beta, cache } => {
                let (dx, dgamma, dbeta) = norm::backward(&g, self.value(*gamma).data(), cache)?;
                acc(*x, dx);
                acc(*gamma, like(*gamma, dgamma)?);
                acc(*beta, like(*beta, dbeta)?);
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(*x);
                let inner: usize = s[2..].iter().product();
                let mut data = Vec::with_capacity(s.iter().product());
                for gv in g.data() {
                    data.extend(std::iter::repeat(gv / inner as f64).take(inner));
                }
                acc(*x, like(*x, data)?);
            }
            Op::RowDot(a, b) => {
                let d = self.shape(*a)[1];
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let mut da = vec![0.0; ad.len()];
                let mut db = vec![0.0; bd.len()];
                for (i, gv) in g.data().iter().enumerate() {
                    for j in i * d..(i + 1) * d {
                        da[j] = gv * bd[j];
                        db[j] = gv * ad[j];
                    }
                }
                acc(*a, like(*a, da)?);
                acc(*b, like(*b, db)?);
            }
            Op::SoftmaxCe { logits, labels, probs } => {
                let k = self.shape(*logits)[1];
                let scale = g.data()[0] / labels.len() as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * k + l] -= scale;
                }
                acc(*logits, like(*logits, d)?);
            }
            Op::ZeroFeature { x, feature } => {
                let s = self.shape(*x);
                let inner: usize = s[2..].iter().product();
                let mut d = g;
                for b in 0..s[0] {
                    let start = (b * s[1] + feature) * inner;
                    d.data_mut()[start..start + inner].fill(0.0);
                }
                acc(*x, d);
            }
        }
        Ok(())
    }
}
