//! Forward and backward kernels for the supported layer kinds.
//!
//! All kernels take NHWC (`N x H x W x C`) or `N x D` tensors and validate
//! shapes up front, returning [`Error::Shape`] naming the offending
//! dimension. Loops are ordered so the innermost index walks contiguous
//! memory (output channels for convolution, output features for dense).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    /// Zero padding to `ceil(in / stride)` outputs; odd padding goes bottom/right.
    Same,
}

/// Resolved spatial arithmetic for one convolution axis pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn axis_geometry(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
    dim: &str,
) -> Result<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if kernel > input {
                return Err(Error::shape(
                    "conv2d",
                    format!("input {dim}"),
                    format!(">= kernel {dim} {kernel}"),
                    input,
                ));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let needed = (out - 1) * stride + kernel;
            let total = needed.saturating_sub(input);
            Ok((out, total / 2))
        }
    }
}

pub fn conv_geometry(
    in_h: usize,
    in_w: usize,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    padding: Padding,
) -> Result<ConvGeometry> {
    if stride == 0 {
        return Err(Error::shape("conv2d", "stride", ">= 1", 0));
    }
    let (out_h, pad_top) = axis_geometry(in_h, kernel_h, stride, padding, "height")?;
    let (out_w, pad_left) = axis_geometry(in_w, kernel_w, stride, padding, "width")?;
    Ok(ConvGeometry {
        out_h,
        out_w,
        pad_top,
        pad_left,
    })
}

fn expect_rank(op: &'static str, t: &Tensor, rank: usize, what: &str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(
            op,
            format!("{what} rank"),
            rank,
            format!("{} ({:?})", t.rank(), t.shape()),
        ));
    }
    Ok(())
}

fn expect_dim(op: &'static str, dim: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::shape(op, dim, expected, actual));
    }
    Ok(())
}

struct ConvDims {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    geo: ConvGeometry,
}

fn conv_dims(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<ConvDims> {
    expect_rank("conv2d", input, 4, "input")?;
    expect_rank("conv2d", kernel, 4, "kernel")?;
    let &[n, h, w, cin] = input.shape() else { unreachable!() };
    let &[kh, kw, kcin, cout] = kernel.shape() else { unreachable!() };
    expect_dim("conv2d", "kernel input channels", cin, kcin)?;
    expect_dim("conv2d", "bias length", cout, bias.len())?;
    let geo = conv_geometry(h, w, kh, kw, stride, padding)?;
    Ok(ConvDims {
        n,
        h,
        w,
        cin,
        kh,
        kw,
        cout,
        stride,
        geo,
    })
}

impl ConvDims {
    /// Input row/column for an output position and kernel tap, if inside the image.
    #[inline]
    fn source(&self, out: usize, tap: usize, pad: usize, extent: usize) -> Option<usize> {
        (out * self.stride + tap).checked_sub(pad).filter(|&i| i < extent)
    }
}

/// 2-D convolution (cross-correlation) with kernel `kh x kw x Cin x Cout`.
pub fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let d = conv_dims(input, kernel, bias, stride, padding)?;
    let ConvGeometry {
        out_h,
        out_w,
        pad_top,
        pad_left,
    } = d.geo;
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0; d.n * out_h * out_w * d.cout];
    for n in 0..d.n {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let base = ((n * out_h + oy) * out_w + ox) * d.cout;
                let acc = &mut out[base..base + d.cout];
                acc.copy_from_slice(bias.data());
                for ky in 0..d.kh {
                    let Some(iy) = d.source(oy, ky, pad_top, d.h) else { continue };
                    for kx in 0..d.kw {
                        let Some(ix) = d.source(ox, kx, pad_left, d.w) else { continue };
                        let in_base = ((n * d.h + iy) * d.w + ix) * d.cin;
                        for ci in 0..d.cin {
                            let v = x[in_base + ci];
                            let k_base = ((ky * d.kw + kx) * d.cin + ci) * d.cout;
                            for (a, &kv) in acc.iter_mut().zip(&k[k_base..k_base + d.cout]) {
                                *a += v * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![d.n, out_h, out_w, d.cout], out)
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub kernel: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor,
    want_input: bool,
) -> Result<ConvGrads> {
    let d = conv_dims(input, kernel, bias, stride, padding)?;
    let ConvGeometry {
        out_h,
        out_w,
        pad_top,
        pad_left,
    } = d.geo;
    let expected = [d.n, out_h, out_w, d.cout];
    if grad_out.shape() != expected {
        return Err(Error::shape(
            "conv2d_backward",
            "output gradient shape",
            format!("{expected:?}"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let x = input.data();
    let k = kernel.data();
    let g = grad_out.data();
    let mut gx = want_input.then(|| vec![0.0; x.len()]);
    let mut gk = vec![0.0; k.len()];
    let mut gb = vec![0.0; d.cout];
    for n in 0..d.n {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let base = ((n * out_h + oy) * out_w + ox) * d.cout;
                let go = &g[base..base + d.cout];
                for (b, &gv) in gb.iter_mut().zip(go) {
                    *b += gv;
                }
                for ky in 0..d.kh {
                    let Some(iy) = d.source(oy, ky, pad_top, d.h) else { continue };
                    for kx in 0..d.kw {
                        let Some(ix) = d.source(ox, kx, pad_left, d.w) else { continue };
                        let in_base = ((n * d.h + iy) * d.w + ix) * d.cin;
                        for ci in 0..d.cin {
                            let k_base = ((ky * d.kw + kx) * d.cin + ci) * d.cout;
                            let v = x[in_base + ci];
                            for (gkv, &gv) in gk[k_base..k_base + d.cout].iter_mut().zip(go) {
                                *gkv += v * gv;
                            }
                            if let Some(gx) = gx.as_mut() {
                                gx[in_base + ci] += k[k_base..k_base + d.cout]
                                    .iter()
                                    .zip(go)
                                    .map(|(kv, gv)| kv * gv)
                                    .sum::<f64>();
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: gx
            .map(|v| Tensor::new(input.shape().to_vec(), v))
            .transpose()?,
        kernel: Tensor::new(kernel.shape().to_vec(), gk)?,
        bias: Tensor::new(bias.shape().to_vec(), gb)?,
    })
}

pub fn pool_geometry(h: usize, w: usize, window: usize, stride: usize) -> Result<(usize, usize)> {
    if window == 0 {
        return Err(Error::shape("maxpool2d", "window", ">= 1", 0));
    }
    if stride == 0 {
        return Err(Error::shape("maxpool2d", "stride", ">= 1", 0));
    }
    if window > h {
        return Err(Error::shape(
            "maxpool2d",
            "input height",
            format!(">= window {window}"),
            h,
        ));
    }
    if window > w {
        return Err(Error::shape(
            "maxpool2d",
            "input width",
            format!(">= window {window}"),
            w,
        ));
    }
    Ok(((h - window) / stride + 1, (w - window) / stride + 1))
}

/// Max pooling output together with the flat input offset that won each cell.
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// Max pooling over `window x window` squares. Ties go to the first element
/// in row-major order within the window.
pub fn maxpool2d_forward_with_argmax(input: &Tensor, window: usize, stride: usize) -> Result<Pooled> {
    expect_rank("maxpool2d", input, 4, "input")?;
    let &[n, h, w, c] = input.shape() else { unreachable!() };
    let (out_h, out_w) = pool_geometry(h, w, window, stride)?;
    let x = input.data();
    let len = n * out_h * out_w * c;
    let mut out = Vec::with_capacity(len);
    let mut argmax = Vec::with_capacity(len);
    for b in 0..n {
        for oy in 0..out_h {
            for ox in 0..out_w {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = usize::MAX;
                    for ky in 0..window {
                        let iy = oy * stride + ky;
                        for kx in 0..window {
                            let ix = ox * stride + kx;
                            let at = ((b * h + iy) * w + ix) * c + ch;
                            if best_at == usize::MAX || x[at] > best {
                                best = x[at];
                                best_at = at;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_at);
                }
            }
        }
    }
    Ok(Pooled {
        output: Tensor::new(vec![n, out_h, out_w, c], out)?,
        argmax,
    })
}

pub fn maxpool2d_forward(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    maxpool2d_forward_with_argmax(input, window, stride).map(|p| p.output)
}

pub fn maxpool2d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    expect_dim("maxpool2d_backward", "output gradient length", argmax.len(), grad_out.len())?;
    let mut gx = Tensor::zeros(input_shape.to_vec());
    let gxd = gx.data_mut();
    for (&at, &g) in argmax.iter().zip(grad_out.data()) {
        gxd[at] += g;
    }
    Ok(gx)
}

fn dense_dims(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    expect_rank("dense", input, 2, "input")?;
    expect_rank("dense", weight, 2, "weight")?;
    let &[n, d] = input.shape() else { unreachable!() };
    let &[wd, k] = weight.shape() else { unreachable!() };
    expect_dim("dense", "weight input width", d, wd)?;
    expect_dim("dense", "bias length", k, bias.len())?;
    Ok((n, d, k))
}

/// `input (N x D) . weight (D x K) + bias (K)`.
pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, d, k) = dense_dims(input, weight, bias)?;
    let x = input.data();
    let wt = weight.data();
    let mut out = Vec::with_capacity(n * k);
    for row in 0..n {
        let mut acc = bias.data().to_vec();
        for (i, &xv) in x[row * d..(row + 1) * d].iter().enumerate() {
            for (a, &wv) in acc.iter_mut().zip(&wt[i * k..(i + 1) * k]) {
                *a += xv * wv;
            }
        }
        out.extend(acc);
    }
    Tensor::new(vec![n, k], out)
}

pub struct DenseGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
    want_input: bool,
) -> Result<DenseGrads> {
    let (n, d, k) = dense_dims(input, weight, bias)?;
    if grad_out.shape() != [n, k] {
        return Err(Error::shape(
            "dense_backward",
            "output gradient shape",
            format!("[{n}, {k}]"),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let x = input.data();
    let wt = weight.data();
    let g = grad_out.data();
    let mut gw = vec![0.0; d * k];
    let mut gb = vec![0.0; k];
    let mut gx = want_input.then(|| vec![0.0; n * d]);
    for row in 0..n {
        let go = &g[row * k..(row + 1) * k];
        for (b, &gv) in gb.iter_mut().zip(go) {
            *b += gv;
        }
        for i in 0..d {
            let xv = x[row * d + i];
            let wrow = &wt[i * k..(i + 1) * k];
            for (gwv, &gv) in gw[i * k..(i + 1) * k].iter_mut().zip(go) {
                *gwv += xv * gv;
            }
            if let Some(gx) = gx.as_mut() {
                gx[row * d + i] = wrow.iter().zip(go).map(|(w, g)| w * g).sum();
            }
        }
    }
    Ok(DenseGrads {
        input: gx.map(|v| Tensor::new(vec![n, d], v)).transpose()?,
        weight: Tensor::new(vec![d, k], gw)?,
        bias: Tensor::new(vec![k], gb)?,
    })
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Passes gradient where the forward input was strictly positive; the
/// subgradient at exactly zero is zero.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    expect_dim("relu_backward", "gradient length", input.len(), grad_out.len())?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Row-wise softmax over the last axis, with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let k = *logits
        .shape()
        .last()
        .ok_or_else(|| Error::shape("softmax", "rank", ">= 1", 0))?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Row-wise log-softmax, used for a stable cross-entropy.
pub fn log_softmax(logits: &Tensor) -> Result<Tensor> {
    let k = *logits
        .shape()
        .last()
        .ok_or_else(|| Error::shape("log_softmax", "rank", ">= 1", 0))?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|&z| z - lse));
    }
    Tensor::new(logits.shape().to_vec(), out)
}
