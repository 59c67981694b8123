//! Direct (loop-nest) 2D cross-correlation kernels with stride, zero padding
//! and dilation. The batch axis is data-parallel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

/// Stride, zero padding and dilation of a 2D convolution, as (rows, cols).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

impl Default for ConvGeom {
    fn default() -> Self {
        Self { stride: (1, 1), padding: (0, 0), dilation: (1, 1) }
    }
}

impl ConvGeom {
    pub fn new(stride: (usize, usize), padding: (usize, usize), dilation: (usize, usize)) -> Self {
        Self { stride, padding, dilation }
    }
}

/// `floor((n + 2p - d(k-1) - 1)/s) + 1`, or `None` when that is < 1.
pub fn out_extent(n: usize, k: usize, stride: usize, pad: usize, dilation: usize) -> Option<usize> {
    if stride == 0 || dilation == 0 || k == 0 {
        return None;
    }
    let span = dilation * (k - 1) + 1;
    let padded = n + 2 * pad;
    if padded < span {
        None
    } else {
        Some((padded - span) / stride + 1)
    }
}

/// Output indices `ox` in `[lo, hi)` for which `ox*stride + off` lands in `[0, n_in)`.
#[inline]
fn valid_range(off: isize, stride: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    let last = n_in as isize - 1 - off;
    let hi = if last < 0 { 0 } else { last / s + 1 };
    let lo = lo.min(n_out as isize) as usize;
    let hi = hi.min(n_out as isize) as usize;
    (lo, hi.max(lo))
}

#[derive(Clone, Copy)]
struct Dims {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn dims(x: &Tensor, k: &Tensor, g: &ConvGeom) -> Result<Dims> {
    let (xs, ks) = (x.shape(), k.shape());
    if xs.len() != 4 || ks.len() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("expected [B,Cin,H,W] and [Cout,Cin,Kh,Kw], got {xs:?} and {ks:?}"),
        ));
    }
    if xs[1] != ks[1] {
        return Err(Error::shape(
            "conv2d",
            format!("input has {} channels, kernel expects {}", xs[1], ks[1]),
        ));
    }
    if g.dilation.0 == 0 || g.dilation.1 == 0 || g.stride.0 == 0 || g.stride.1 == 0 {
        return Err(Error::InvalidArgument("conv2d: stride and dilation must be >= 1".into()));
    }
    let oh = out_extent(xs[2], ks[2], g.stride.0, g.padding.0, g.dilation.0);
    let ow = out_extent(xs[3], ks[3], g.stride.1, g.padding.1, g.dilation.1);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(Dims {
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            cout: ks[0],
            kh: ks[2],
            kw: ks[3],
            oh,
            ow,
        }),
        _ => Err(Error::EmptyOutput {
            op: "conv2d",
            detail: format!("input {xs:?}, kernel {ks:?}, {g:?}"),
        }),
    }
}

pub(crate) fn conv2d_forward(
    x: &Tensor,
    k: &Tensor,
    bias: Option<&Tensor>,
    g: &ConvGeom,
) -> Result<Tensor> {
    let d = dims(x, k, g)?;
    if let Some(b) = bias {
        if b.len() != d.cout {
            return Err(Error::shape("conv2d", format!("bias length {} != {}", b.len(), d.cout)));
        }
    }
    let batch = x.shape()[0];
    let in_stride = d.cin * d.h * d.w;
    let out_stride = d.cout * d.oh * d.ow;
    let mut out = vec![0.0; batch * out_stride];
    let (xd, kd) = (x.data(), k.data());
    let bd = bias.map(|b| b.data());
    par::for_each_chunk_mut(&mut out, out_stride, |b, dst| {
        forward_sample(&xd[b * in_stride..(b + 1) * in_stride], kd, bd, g, d, dst);
    });
    Tensor::new(vec![batch, d.cout, d.oh, d.ow], out)
}

fn forward_sample(x: &[f64], k: &[f64], bias: Option<&[f64]>, g: &ConvGeom, d: Dims, out: &mut [f64]) {
    let plane = d.oh * d.ow;
    for o in 0..d.cout {
        let out_o = &mut out[o * plane..(o + 1) * plane];
        out_o.fill(bias.map_or(0.0, |b| b[o]));
        for c in 0..d.cin {
            let xc = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
            for ky in 0..d.kh {
                let wrow = &k[((o * d.cin + c) * d.kh + ky) * d.kw..][..d.kw];
                for oy in 0..d.oh {
                    let iy = (oy * g.stride.0 + ky * g.dilation.0) as isize - g.padding.0 as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let xrow = &xc[iy as usize * d.w..(iy as usize + 1) * d.w];
                    let orow = &mut out_o[oy * d.ow..(oy + 1) * d.ow];
                    for (kx, &wv) in wrow.iter().enumerate() {
                        let off = (kx * g.dilation.1) as isize - g.padding.1 as isize;
                        let (lo, hi) = valid_range(off, g.stride.1, d.w, d.ow);
                        if lo == hi {
                            continue;
                        }
                        if g.stride.1 == 1 {
                            let start = (lo as isize + off) as usize;
                            let xs = &xrow[start..start + (hi - lo)];
                            for (acc, xv) in orow[lo..hi].iter_mut().zip(xs) {
                                *acc += wv * xv;
                            }
                        } else {
                            for (ox, acc) in orow.iter_mut().enumerate().take(hi).skip(lo) {
                                let ix = (ox * g.stride.1) as isize + off;
                                *acc += wv * xrow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of a convolution: `(dx, dk, dbias)`. `dx` is skipped when not needed.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    dy: &Tensor,
    g: &ConvGeom,
    need_dx: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let d = dims(x, k, g)?;
    let batch = x.shape()[0];
    let in_stride = d.cin * d.h * d.w;
    let out_stride = d.cout * d.oh * d.ow;
    let (xd, kd, dyd) = (x.data(), k.data(), dy.data());
    let per_sample = par::map_range(batch, |b| {
        backward_sample(
            &xd[b * in_stride..(b + 1) * in_stride],
            kd,
            &dyd[b * out_stride..(b + 1) * out_stride],
            g,
            d,
            need_dx,
        )
    });
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; d.cout];
    let mut dx = if need_dx { Vec::with_capacity(x.len()) } else { Vec::new() };
    for (dx_b, dk_b, db_b) in per_sample {
        for (a, v) in dk.iter_mut().zip(&dk_b) {
            *a += v;
        }
        for (a, v) in db.iter_mut().zip(&db_b) {
            *a += v;
        }
        if need_dx {
            dx.extend_from_slice(&dx_b);
        }
    }
    let dx = if need_dx { Some(Tensor::new(x.shape().to_vec(), dx)?) } else { None };
    Ok((dx, Tensor::new(k.shape().to_vec(), dk)?, Tensor::from_vec(db)))
}

fn backward_sample(
    x: &[f64],
    k: &[f64],
    dy: &[f64],
    g: &ConvGeom,
    d: Dims,
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = d.oh * d.ow;
    let mut dx = if need_dx { vec![0.0; x.len()] } else { Vec::new() };
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; d.cout];
    for o in 0..d.cout {
        let dy_o = &dy[o * plane..(o + 1) * plane];
        db[o] = dy_o.iter().sum();
        for c in 0..d.cin {
            let base = c * d.h * d.w;
            for ky in 0..d.kh {
                let widx = ((o * d.cin + c) * d.kh + ky) * d.kw;
                for oy in 0..d.oh {
                    let iy = (oy * g.stride.0 + ky * g.dilation.0) as isize - g.padding.0 as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let row = base + iy as usize * d.w;
                    let dyrow = &dy_o[oy * d.ow..(oy + 1) * d.ow];
                    for kx in 0..d.kw {
                        let off = (kx * g.dilation.1) as isize - g.padding.1 as isize;
                        let (lo, hi) = valid_range(off, g.stride.1, d.w, d.ow);
                        if lo == hi {
                            continue;
                        }
                        let wv = k[widx + kx];
                        let mut acc = 0.0;
                        if g.stride.1 == 1 {
                            let start = row + (lo as isize + off) as usize;
                            let xs = &x[start..start + (hi - lo)];
                            for (dv, xv) in dyrow[lo..hi].iter().zip(xs) {
                                acc += dv * xv;
                            }
                            if need_dx {
                                let dxs = &mut dx[start..start + (hi - lo)];
                                for (dst, dv) in dxs.iter_mut().zip(&dyrow[lo..hi]) {
                                    *dst += wv * dv;
                                }
                            }
                        } else {
                            for (ox, dv) in dyrow.iter().enumerate().take(hi).skip(lo) {
                                let ix = row + ((ox * g.stride.1) as isize + off) as usize;
                                acc += dv * x[ix];
                                if need_dx {
                                    dx[ix] += wv * dv;
                                }
                            }
                        }
                        dk[widx + kx] += acc;
                    }
                }
            }
        }
    }
    (dx, dk, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extents() {
        assert_eq!(out_extent(4, 3, 1, 0, 1), Some(2));
        assert_eq!(out_extent(440, 33, 2, 16, 1), Some(220));
        assert_eq!(out_extent(440, 33, 2, 256, 16), Some(220));
        assert_eq!(out_extent(2, 3, 1, 0, 1), None);
    }

    #[test]
    fn valid_range_handles_padding_and_stride() {
        // off = -2, stride 2, 5 inputs, 4 outputs: ox*2-2 in [0,5) -> ox in {1,2,3}
        assert_eq!(valid_range(-2, 2, 5, 4), (1, 4));
        assert_eq!(valid_range(3, 1, 3, 4), (0, 0));
        assert_eq!(valid_range(0, 1, 3, 3), (0, 3));
    }
}
