//! Forward and backward kernels for the tape primitives.
//!
//! All image tensors are `(N, C, H, W)`. Kernels are direct loops; none of
//! them allocate more than their outputs.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize, dilation: usize) -> usize {
    (len + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1
}

fn conv_dims(x: &Tensor, w: &Tensor, g: ConvGeom) -> Result<[usize; 9]> {
    let (n, c, h, wd) = x.dims4("conv2d")?;
    let (oc, icg, kh, kw) = w.dims4("conv2d")?;
    if g.groups == 0 || c % g.groups != 0 || oc % g.groups != 0 || c / g.groups != icg {
        return Err(Error::Shape {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    if h + 2 * g.padding < g.dilation * (kh - 1) + 1 || wd + 2 * g.padding < g.dilation * (kw - 1) + 1 {
        return Err(Error::Shape {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let oh = conv_out_len(h, kh, g.stride, g.padding, g.dilation);
    let ow = conv_out_len(wd, kw, g.stride, g.padding, g.dilation);
    Ok([n, c, h, wd, oc, kh, kw, oh, ow])
}

/// Range of output columns `o` for which `o*stride - pad + off` lands in `[0, len)`.
#[inline]
fn valid_range(len: usize, out_len: usize, stride: usize, pad: usize, off: usize) -> (usize, usize) {
    // need o*stride + off >= pad and o*stride + off < len + pad
    let lo = if off >= pad { 0 } else { (pad - off).div_ceil(stride) };
    let hi_excl = if len + pad > off {
        ((len + pad - off - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi_excl.max(lo))
}

pub fn conv2d(x: &Tensor, w: &Tensor, g: ConvGeom) -> Result<Tensor> {
    let [n, c, h, wd, oc, kh, kw, oh, ow] = conv_dims(x, w, g)?;
    let icg = c / g.groups;
    let ocg = oc / g.groups;
    let xd = x.data();
    let wdata = w.data();
    let mut out = vec![0.0; n * oc * oh * ow];
    for b in 0..n {
        for o in 0..oc {
            let grp = o / ocg;
            let obase = (b * oc + o) * oh * ow;
            for i in 0..icg {
                let ch = grp * icg + i;
                let xbase = (b * c + ch) * h * wd;
                for ky in 0..kh {
                    let (y0, y1) = valid_range(h, oh, g.stride, g.padding, ky * g.dilation);
                    for kx in 0..kw {
                        let wv = wdata[((o * icg + i) * kh + ky) * kw + kx];
                        let (x0, x1) = valid_range(wd, ow, g.stride, g.padding, kx * g.dilation);
                        for oy in y0..y1 {
                            let iy = oy * g.stride + ky * g.dilation - g.padding;
                            let row = xbase + iy * wd;
                            let orow = obase + oy * ow;
                            for ox in x0..x1 {
                                let ix = ox * g.stride + kx * g.dilation - g.padding;
                                out[orow + ox] += wv * xd[row + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, oc, oh, ow], out)
}

/// Returns `(dx, dw)`; `dx` is skipped when `need_dx` is false.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    g: ConvGeom,
    need_dx: bool,
) -> Result<(Option<Tensor>, Tensor)> {
    let [n, c, h, wd, oc, kh, kw, oh, ow] = conv_dims(x, w, g)?;
    let icg = c / g.groups;
    let ocg = oc / g.groups;
    let xd = x.data();
    let wdata = w.data();
    let gd = gout.data();
    let mut dx = if need_dx { vec![0.0; x.numel()] } else { Vec::new() };
    let mut dw = vec![0.0; w.numel()];
    for b in 0..n {
        for o in 0..oc {
            let grp = o / ocg;
            let obase = (b * oc + o) * oh * ow;
            for i in 0..icg {
                let ch = grp * icg + i;
                let xbase = (b * c + ch) * h * wd;
                for ky in 0..kh {
                    let (y0, y1) = valid_range(h, oh, g.stride, g.padding, ky * g.dilation);
                    for kx in 0..kw {
                        let widx = ((o * icg + i) * kh + ky) * kw + kx;
                        let wv = wdata[widx];
                        let (x0, x1) = valid_range(wd, ow, g.stride, g.padding, kx * g.dilation);
                        let mut acc = 0.0;
                        for oy in y0..y1 {
                            let iy = oy * g.stride + ky * g.dilation - g.padding;
                            let row = xbase + iy * wd;
                            let orow = obase + oy * ow;
                            for ox in x0..x1 {
                                let ix = ox * g.stride + kx * g.dilation - g.padding;
                                let gv = gd[orow + ox];
                                acc += gv * xd[row + ix];
                                if need_dx {
                                    dx[row + ix] += gv * wv;
                                }
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    let dx = if need_dx {
        Some(Tensor::new(x.shape().to_vec(), dx)?)
    } else {
        None
    };
    Ok((dx, Tensor::new(w.shape().to_vec(), dw)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeom {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

fn pool_dims(x: &Tensor, p: PoolGeom, op: &'static str) -> Result<[usize; 6]> {
    let (n, c, h, w) = x.dims4(op)?;
    if h + 2 * p.padding < p.kernel || w + 2 * p.padding < p.kernel {
        return Err(Error::Shape {
            op,
            lhs: x.shape().to_vec(),
            rhs: vec![p.kernel, p.kernel],
        });
    }
    let oh = conv_out_len(h, p.kernel, p.stride, p.padding, 1);
    let ow = conv_out_len(w, p.kernel, p.stride, p.padding, 1);
    Ok([n, c, h, w, oh, ow])
}

/// Window bounds clipped to the image, for output index `o`.
#[inline]
fn window(o: usize, p: PoolGeom, len: usize) -> (usize, usize) {
    let start = (o * p.stride) as isize - p.padding as isize;
    let lo = start.max(0) as usize;
    let hi = ((start + p.kernel as isize) as usize).min(len);
    (lo, hi)
}

/// Average pool; padded positions are excluded from the divisor.
pub fn avg_pool(x: &Tensor, p: PoolGeom) -> Result<Tensor> {
    let [n, c, h, w, oh, ow] = pool_dims(x, p, "avg_pool")?;
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            let (y0, y1) = window(oy, p, h);
            for ox in 0..ow {
                let (x0, x1) = window(ox, p, w);
                let mut s = 0.0;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        s += xd[base + iy * w + ix];
                    }
                }
                out.push(s / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

pub fn avg_pool_backward(x_shape: &[usize], gout: &Tensor, p: PoolGeom) -> Result<Tensor> {
    let probe = Tensor::zeros(x_shape);
    let [n, c, h, w, oh, ow] = pool_dims(&probe, p, "avg_pool")?;
    let gd = gout.data();
    let mut dx = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            let (y0, y1) = window(oy, p, h);
            for ox in 0..ow {
                let (x0, x1) = window(ox, p, w);
                let share = gd[(plane * oh + oy) * ow + ox] / ((y1 - y0) * (x1 - x0)) as f64;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        dx[base + iy * w + ix] += share;
                    }
                }
            }
        }
    }
    Tensor::new(x_shape.to_vec(), dx)
}

/// Max pool returning the flat input index of each output's maximum.
/// Ties resolve to the first maximum in row-major scan order.
pub fn max_pool(x: &Tensor, p: PoolGeom) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w, oh, ow] = pool_dims(x, p, "max_pool")?;
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            let (y0, y1) = window(oy, p, h);
            for ox in 0..ow {
                let (x0, x1) = window(ox, p, w);
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = base + y0 * w + x0;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let idx = base + iy * w + ix;
                        if xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, arg))
}

pub fn max_pool_backward(x_shape: &[usize], gout: &Tensor, argmax: &[usize]) -> Result<Tensor> {
    let mut dx = vec![0.0; x_shape.iter().product()];
    for (g, &idx) in gout.data().iter().zip(argmax) {
        dx[idx] += g;
    }
    Tensor::new(x_shape.to_vec(), dx)
}

/// Per-channel statistics normalization. With `batch_stats` the mean and
/// variance come from the batch; otherwise unit statistics are assumed.
pub struct NormOut {
    pub y: Tensor,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub fn channel_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, batch_stats: bool, eps: f64) -> Result<NormOut> {
    let (n, c, h, w) = x.dims4("channel_norm")?;
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::Shape {
            op: "channel_norm",
            lhs: x.shape().to_vec(),
            rhs: gamma.shape().to_vec(),
        });
    }
    let plane = h * w;
    let count = (n * plane) as f64;
    let xd = x.data();
    let mut inv_std = vec![0.0; c];
    let mut mean = vec![0.0; c];
    if batch_stats {
        for ch in 0..c {
            let mut s = 0.0;
            for b in 0..n {
                let base = (b * c + ch) * plane;
                s += xd[base..base + plane].iter().sum::<f64>();
            }
            let mu = s / count;
            let mut v = 0.0;
            for b in 0..n {
                let base = (b * c + ch) * plane;
                v += xd[base..base + plane].iter().map(|x| (x - mu) * (x - mu)).sum::<f64>();
            }
            mean[ch] = mu;
            inv_std[ch] = 1.0 / (v / count + eps).sqrt();
        }
    } else {
        inv_std.iter_mut().for_each(|s| *s = 1.0 / (1.0 + eps).sqrt());
    }
    let mut xhat = vec![0.0; x.numel()];
    let mut y = vec![0.0; x.numel()];
    let (gd, bd) = (gamma.data(), beta.data());
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            for i in base..base + plane {
                let xh = (xd[i] - mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                y[i] = gd[ch] * xh + bd[ch];
            }
        }
    }
    Ok(NormOut {
        y: Tensor::new(x.shape().to_vec(), y)?,
        xhat,
        inv_std,
    })
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn channel_norm_backward(
    shape: &[usize],
    gamma: &Tensor,
    xhat: &[f64],
    inv_std: &[f64],
    gout: &Tensor,
    batch_stats: bool,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let plane = h * w;
    let count = (n * plane) as f64;
    let gd = gout.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            for i in base..base + plane {
                dbeta[ch] += gd[i];
                dgamma[ch] += gd[i] * xhat[i];
            }
        }
    }
    let mut dx = vec![0.0; gd.len()];
    for ch in 0..c {
        let scale = gamma.data()[ch] * inv_std[ch];
        let (mean_g, mean_gx) = if batch_stats {
            (dbeta[ch] / count, dgamma[ch] / count)
        } else {
            (0.0, 0.0)
        };
        for b in 0..n {
            let base = (b * c + ch) * plane;
            for i in base..base + plane {
                dx[i] = scale * (gd[i] - mean_g - xhat[i] * mean_gx);
            }
        }
    }
    Ok((
        Tensor::new(shape.to_vec(), dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}

/// Row-wise softmax over the last axis.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let k = *x.shape().last().unwrap_or(&1);
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(k.max(1)) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Channel permutation used by shuffles: `out[i * groups + j] = in[j * cpg + i]`.
pub fn shuffle_permutation(channels: usize, groups: usize) -> Vec<usize> {
    let cpg = channels / groups;
    let mut src = vec![0; channels];
    for i in 0..cpg {
        for j in 0..groups {
            src[i * groups + j] = j * cpg + i;
        }
    }
    src
}

/// Copy channels of `x` so that output channel `k` is input channel `src[k]`.
pub fn permute_channels(x: &Tensor, src: &[usize]) -> Result<Tensor> {
    x.select_channels(src)
}

/// Inverse of [`permute_channels`], used for gradients.
pub fn unpermute_channels(g: &Tensor, src: &[usize]) -> Result<Tensor> {
    let (n, c, h, w) = g.dims4("channel_shuffle")?;
    let plane = h * w;
    let mut out = vec![0.0; g.numel()];
    let gd = g.data();
    for b in 0..n {
        for (k, &s) in src.iter().enumerate() {
            let from = (b * c + k) * plane;
            let to = (b * c + s) * plane;
            out[to..to + plane].copy_from_slice(&gd[from..from + plane]);
        }
    }
    Tensor::new(g.shape().to_vec(), out)
}

pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let (n, _, h, w) = parts[0].dims4("concat")?;
    let mut total = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4("concat")?;
        if pn != n || ph != h || pw != w {
            return Err(Error::Shape {
                op: "concat",
                lhs: parts[0].shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        total += pc;
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * total * plane);
    for b in 0..n {
        for p in parts {
            let pc = p.dim(1);
            let start = b * pc * plane;
            out.extend_from_slice(&p.data()[start..start + pc * plane]);
        }
    }
    Tensor::new(vec![n, total, h, w], out)
}

pub fn split_channels(g: &Tensor, sizes: &[usize]) -> Result<Vec<Tensor>> {
    let (n, _, h, w) = g.dims4("concat")?;
    let plane = h * w;
    let total: usize = sizes.iter().sum();
    let mut outs: Vec<Vec<f64>> = sizes.iter().map(|s| Vec::with_capacity(n * s * plane)).collect();
    let gd = g.data();
    for b in 0..n {
        let mut off = b * total * plane;
        for (k, &s) in sizes.iter().enumerate() {
            outs[k].extend_from_slice(&gd[off..off + s * plane]);
            off += s * plane;
        }
    }
    outs.into_iter()
        .zip(sizes)
        .map(|(d, &s)| Tensor::new(vec![n, s, h, w], d))
        .collect()
}
