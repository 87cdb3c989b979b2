//! Reference implementations used as test oracles.
//!
//! Everything here is written for obviousness rather than speed: explicit
//! zero-padded buffers, multi-index `get`/`set`, one window at a time. None
//! of it calls into the layer kernels, the backward pass or the batched
//! occlusion path of `lensbox-core`, so agreement between the two is
//! meaningful.

use std::collections::BTreeMap;

use lensbox_core::layers::Padding;
use lensbox_core::{LayerSpec, Model, Tensor};
use rand::Rng;

pub fn random_tensor(rng: &mut impl Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Convolution by direct summation over an explicitly zero-padded copy of the input.
pub fn naive_conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, padding: Padding) -> Tensor {
    let s = input.shape();
    let (n, h, w, cin) = (s[0], s[1], s[2], s[3]);
    let k = kernel.shape();
    let (kh, kw, cout) = (k[0], k[1], k[3]);
    let (out_h, pad_h) = match padding {
        Padding::Valid => ((h - kh) / stride + 1, 0),
        Padding::Same => {
            let o = h.div_ceil(stride);
            (o, ((o - 1) * stride + kh).saturating_sub(h))
        }
    };
    let (out_w, pad_w) = match padding {
        Padding::Valid => ((w - kw) / stride + 1, 0),
        Padding::Same => {
            let o = w.div_ceil(stride);
            (o, ((o - 1) * stride + kw).saturating_sub(w))
        }
    };
    let (top, left) = (pad_h / 2, pad_w / 2);
    let mut padded = Tensor::zeros(vec![n, h + pad_h, w + pad_w, cin]);
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                for c in 0..cin {
                    padded.set(&[b, y + top, x + left, c], input.get(&[b, y, x, c]));
                }
            }
        }
    }
    let mut out = Tensor::zeros(vec![n, out_h, out_w, cout]);
    for b in 0..n {
        for oy in 0..out_h {
            for ox in 0..out_w {
                for co in 0..cout {
                    let mut acc = bias.get(&[co]);
                    for ky in 0..kh {
                        for kx in 0..kw {
                            for ci in 0..cin {
                                acc += padded.get(&[b, oy * stride + ky, ox * stride + kx, ci])
                                    * kernel.get(&[ky, kx, ci, co]);
                            }
                        }
                    }
                    out.set(&[b, oy, ox, co], acc);
                }
            }
        }
    }
    out
}

/// Max pooling plus the row-major index (within the window) of the first maximum.
pub fn naive_maxpool(input: &Tensor, window: usize, stride: usize) -> (Tensor, Vec<usize>) {
    let s = input.shape();
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let mut out = Tensor::zeros(vec![n, oh, ow, c]);
    let mut winners = Vec::new();
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let vals: Vec<f64> = (0..window * window)
                        .map(|i| input.get(&[b, oy * stride + i / window, ox * stride + i % window, ch]))
                        .collect();
                    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    winners.push(vals.iter().position(|&v| v == max).unwrap());
                    out.set(&[b, oy, ox, ch], max);
                }
            }
        }
    }
    (out, winners)
}

pub fn naive_dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let k = weight.shape()[1];
    let mut out = Tensor::zeros(vec![n, k]);
    for r in 0..n {
        for j in 0..k {
            let mut acc = bias.get(&[j]);
            for i in 0..d {
                acc += input.get(&[r, i]) * weight.get(&[i, j]);
            }
            out.set(&[r, j], acc);
        }
    }
    out
}

pub fn naive_softmax(logits: &Tensor) -> Tensor {
    let k = *logits.shape().last().unwrap();
    let mut data = Vec::new();
    for row in logits.data().chunks(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|z| (z - m).exp()).sum();
        data.extend(row.iter().map(|z| (z - m).exp() / denom));
    }
    Tensor::new(logits.shape().to_vec(), data).unwrap()
}

/// Result of interpreting a model with the naive oracles.
pub struct NaiveForward {
    pub logits: Tensor,
    /// Sign of every ReLU input and argmax of every pooling window, in
    /// layer order. Two inputs with equal patterns lie on the same linear
    /// piece of the network.
    pub pattern: Vec<usize>,
}

pub fn naive_forward(model: &Model, input: &Tensor) -> NaiveForward {
    let mut x = input.clone();
    let mut pattern = Vec::new();
    for layer in &model.layers {
        x = match layer {
            LayerSpec::Conv2d { stride, padding, weight, bias, .. } => {
                naive_conv2d(&x, &model.weights[weight], &model.weights[bias], *stride, *padding)
            }
            LayerSpec::Maxpool2d { window, stride } => {
                let (out, winners) = naive_maxpool(&x, *window, *stride);
                pattern.extend(winners);
                out
            }
            LayerSpec::Dense { weight, bias, .. } => naive_dense(&x, &model.weights[weight], &model.weights[bias]),
            LayerSpec::Relu => {
                pattern.extend(x.data().iter().map(|&v| usize::from(v > 0.0)));
                x.map(|v| if v > 0.0 { v } else { 0.0 })
            }
            LayerSpec::Flatten => {
                let n = x.shape()[0];
                let d = x.len() / n;
                x.reshape(vec![n, d]).unwrap()
            }
            LayerSpec::Softmax => break,
        };
    }
    NaiveForward { logits: x, pattern }
}

pub fn naive_probabilities(model: &Model, input: &Tensor) -> Tensor {
    naive_softmax(&naive_forward(model, input).logits)
}

pub fn with_coordinate(x: &Tensor, index: usize, value: f64) -> Tensor {
    let mut y = x.clone();
    y.data_mut()[index] = value;
    y
}

/// Central difference `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_difference(f: impl Fn(&Tensor) -> f64, x: &Tensor, index: usize, h: f64) -> f64 {
    let v = x.data()[index];
    (f(&with_coordinate(x, index, v + h)) - f(&with_coordinate(x, index, v - h))) / (2.0 * h)
}

/// Whether perturbing coordinate `index` by `±h` keeps the input on the same
/// linear piece, i.e. crosses no ReLU or maxpool kink.
pub fn smooth_at(model: &Model, x: &Tensor, index: usize, h: f64) -> bool {
    let v = x.data()[index];
    let base = naive_forward(model, x).pattern;
    [v - h, v + h]
        .iter()
        .all(|&p| naive_forward(model, &with_coordinate(x, index, p)).pattern == base)
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Incremental model construction for tests.
pub struct ModelBuilder {
    layers: Vec<LayerSpec>,
    weights: BTreeMap<String, Tensor>,
    input_shape: [usize; 3],
    shape: Vec<usize>,
}

impl ModelBuilder {
    pub fn new(input_shape: [usize; 3]) -> Self {
        ModelBuilder { layers: Vec::new(), weights: BTreeMap::new(), input_shape, shape: input_shape.to_vec() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn conv(mut self, kernel: Tensor, bias: Tensor, stride: usize, padding: Padding) -> Self {
        let k = kernel.shape().to_vec();
        let i = self.layers.len();
        let (wn, bn) = (format!("l{i}.kernel"), format!("l{i}.bias"));
        self.weights.insert(wn.clone(), kernel);
        self.weights.insert(bn.clone(), bias);
        let (h, w) = (self.shape[0], self.shape[1]);
        let out = |n: usize, kk: usize| match padding {
            Padding::Valid => (n - kk) / stride + 1,
            Padding::Same => n.div_ceil(stride),
        };
        self.shape = vec![out(h, k[0]), out(w, k[1]), k[3]];
        self.layers.push(LayerSpec::Conv2d {
            kernel_h: k[0],
            kernel_w: k[1],
            in_channels: k[2],
            out_channels: k[3],
            stride,
            padding,
            weight: wn,
            bias: bn,
        });
        self
    }

    pub fn maxpool(mut self, window: usize, stride: usize) -> Self {
        self.shape = vec![(self.shape[0] - window) / stride + 1, (self.shape[1] - window) / stride + 1, self.shape[2]];
        self.layers.push(LayerSpec::Maxpool2d { window, stride });
        self
    }

    pub fn relu(mut self) -> Self {
        self.layers.push(LayerSpec::Relu);
        self
    }

    pub fn flatten(mut self) -> Self {
        self.shape = vec![self.shape.iter().product()];
        self.layers.push(LayerSpec::Flatten);
        self
    }

    pub fn dense(mut self, weight: Tensor, bias: Tensor) -> Self {
        let (d, k) = (weight.shape()[0], weight.shape()[1]);
        let i = self.layers.len();
        let (wn, bn) = (format!("l{i}.weight"), format!("l{i}.bias"));
        self.weights.insert(wn.clone(), weight);
        self.weights.insert(bn.clone(), bias);
        self.shape = vec![k];
        self.layers.push(LayerSpec::Dense { in_features: d, out_features: k, weight: wn, bias: bn });
        self
    }

    pub fn softmax(mut self) -> Self {
        self.layers.push(LayerSpec::Softmax);
        self
    }

    pub fn build(self) -> Model {
        let k = self.shape[0];
        Model::new(self.layers, self.weights, self.input_shape, k).expect("test model is consistent")
    }
}

/// `flatten -> dense(weight, 0) -> softmax`; logits are `x . weight`.
pub fn linear_model(input_shape: [usize; 3], weight: Tensor) -> Model {
    let k = weight.shape()[1];
    ModelBuilder::new(input_shape)
        .flatten()
        .dense(weight, Tensor::zeros(vec![k]))
        .softmax()
        .build()
}

fn scaled(rng: &mut impl Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let b = (3.0 / fan_in as f64).sqrt();
    random_tensor(rng, shape, -b, b)
}

fn random_conv(rng: &mut impl Rng, b: ModelBuilder) -> ModelBuilder {
    let (h, w, c) = (b.shape()[0], b.shape()[1], b.shape()[2]);
    let kh = rng.gen_range(1..=3.min(h));
    let kw = rng.gen_range(1..=3.min(w));
    let cout = rng.gen_range(1..=4);
    let stride = rng.gen_range(1..=2);
    let padding = if rng.gen_bool(0.5) { Padding::Same } else { Padding::Valid };
    let kernel = scaled(rng, vec![kh, kw, c, cout], kh * kw * c);
    let bias = random_tensor(rng, vec![cout], -0.2, 0.2);
    b.conv(kernel, bias, stride, padding)
}

fn random_pool(rng: &mut impl Rng, b: ModelBuilder) -> ModelBuilder {
    let side = b.shape()[0].min(b.shape()[1]);
    if side < 2 {
        return b;
    }
    let window = rng.gen_range(2..=3.min(side));
    let stride = rng.gen_range(1..=window);
    b.maxpool(window, stride)
}

fn random_dense(rng: &mut impl Rng, b: ModelBuilder, out: usize) -> ModelBuilder {
    let d = b.shape()[0];
    let w = scaled(rng, vec![d, out], d);
    let bias = random_tensor(rng, vec![out], -0.2, 0.2);
    b.dense(w, bias)
}

/// A random classifier with at most four conv/pool/relu/dense layers (flatten
/// and a trailing softmax not counted) on an input of at most 12x12x3.
pub fn random_model(rng: &mut impl Rng) -> Model {
    let shape = [rng.gen_range(3..=12), rng.gen_range(3..=12), rng.gen_range(1..=3)];
    let classes = rng.gen_range(2..=5);
    let b = ModelBuilder::new(shape);
    let b = match rng.gen_range(0..6) {
        0 => random_dense(rng, b.flatten(), classes),
        1 => {
            let hidden = rng.gen_range(3..=8);
            let b = random_dense(rng, b.flatten(), hidden).relu();
            random_dense(rng, b, classes)
        }
        2 => {
            let b = random_conv(rng, b).relu().flatten();
            random_dense(rng, b, classes)
        }
        3 => {
            let b = random_conv(rng, b);
            let b = random_pool(rng, b).flatten();
            random_dense(rng, b, classes)
        }
        4 => {
            let b = random_conv(rng, b).relu();
            let b = random_pool(rng, b).flatten();
            random_dense(rng, b, classes)
        }
        _ => {
            let b = random_conv(rng, b).relu();
            let b = random_conv(rng, b).flatten();
            random_dense(rng, b, classes)
        }
    };
    let b = if rng.gen_bool(0.5) { b.softmax() } else { b };
    b.build()
}

pub fn random_input(rng: &mut impl Rng, model: &Model, batch: usize) -> Tensor {
    let [h, w, c] = model.input_shape;
    random_tensor(rng, vec![batch, h, w, c], -1.0, 1.0)
}

/// Occlusion grid computed one window at a time with the naive forward pass.
pub fn brute_force_occlusion(
    model: &Model,
    input: &Tensor,
    class_index: usize,
    window: usize,
    stride: usize,
    fill: f64,
) -> Tensor {
    let s = input.shape();
    let (h, w, c) = (s[1], s[2], s[3]);
    let rows = (h - window) / stride + 1;
    let cols = (w - window) / stride + 1;
    let mut grid = Tensor::zeros(vec![rows, cols]);
    for i in 0..rows {
        for j in 0..cols {
            let mut x = input.clone();
            for y in i * stride..i * stride + window {
                for xx in j * stride..j * stride + window {
                    for ch in 0..c {
                        x.set(&[0, y, xx, ch], fill);
                    }
                }
            }
            let p = naive_probabilities(model, &x);
            grid.set(&[i, j], p.get(&[0, class_index]));
        }
    }
    grid
}
