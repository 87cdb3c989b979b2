//! Sequential CNN models: validation, traced forward pass, reverse-mode
//! differentiation and a plain SGD step.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{self, Padding};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv2d {
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        padding: Padding,
        weight: String,
        bias: String,
    },
    Maxpool2d {
        window: usize,
        stride: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
        weight: String,
        bias: String,
    },
    Relu,
    Flatten,
    Softmax,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Maxpool2d { .. } => "maxpool2d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// Names of the (kernel, bias) weights this layer reads, if any.
    pub fn weight_names(&self) -> Option<(&str, &str)> {
        match self {
            LayerSpec::Conv2d { weight, bias, .. } | LayerSpec::Dense { weight, bias, .. } => {
                Some((weight, bias))
            }
            _ => None,
        }
    }
}

/// Which class score a gradient is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    /// Pre-softmax class score.
    Logit,
    Probability,
}

/// A sequential classifier. Construct through [`Model::new`], which runs
/// [`Model::validate`]; inference does not re-check layer compatibility.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layers: Vec<LayerSpec>,
    pub weights: BTreeMap<String, Tensor>,
    /// Per-sample input extents `[H, W, C]`.
    pub input_shape: [usize; 3],
    pub class_count: usize,
}

/// Activations recorded by one forward pass, used for differentiation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    fingerprint: u64,
    /// `activations[0]` is the input; `activations[i + 1]` is layer `i`'s output.
    activations: Vec<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
}

impl ForwardTrace {
    pub fn layer_count(&self) -> usize {
        self.activations.len() - 1
    }

    pub fn input(&self) -> &Tensor {
        &self.activations[0]
    }

    pub fn layer_input(&self, layer: usize) -> &Tensor {
        &self.activations[layer]
    }

    pub fn layer_output(&self, layer: usize) -> &Tensor {
        &self.activations[layer + 1]
    }

    /// Winning input offsets of a maxpool layer.
    pub fn argmax(&self, layer: usize) -> Option<&[usize]> {
        self.argmax[layer].as_deref()
    }
}

#[derive(Debug)]
pub struct ForwardOutput {
    pub probabilities: Tensor,
    pub logits: Tensor,
    pub trace: ForwardTrace,
}

/// Gradients of a scalar objective with respect to every weight.
pub type WeightGrads = BTreeMap<String, Tensor>;

fn layer_err(layer: usize, reason: impl Into<String>) -> Error {
    Error::InvalidLayer {
        layer,
        reason: reason.into(),
    }
}

impl Model {
    pub fn new(
        layers: Vec<LayerSpec>,
        weights: BTreeMap<String, Tensor>,
        input_shape: [usize; 3],
        class_count: usize,
    ) -> Result<Self> {
        let model = Model {
            layers,
            weights,
            input_shape,
            class_count,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks the layer chain and weight table, returning the per-sample
    /// output shape of every layer.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.contains(&0) {
            return Err(Error::InvalidModel(format!(
                "input shape {:?} has a zero extent",
                self.input_shape
            )));
        }
        if self.class_count == 0 {
            return Err(Error::InvalidModel("class_count must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidModel("model has no layers".into()));
        }
        for (name, w) in &self.weights {
            if !w.all_finite() {
                return Err(Error::InvalidModel(format!("weight {name} has non-finite values")));
            }
        }

        let mut shape = self.input_shape.to_vec();
        let mut shapes = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match *layer {
                LayerSpec::Conv2d {
                    kernel_h,
                    kernel_w,
                    in_channels,
                    out_channels,
                    stride,
                    padding,
                    ..
                } => {
                    let &[h, w, c] = shape.as_slice() else {
                        return Err(layer_err(i, format!("conv2d needs H x W x C input, got {shape:?}")));
                    };
                    if c != in_channels {
                        return Err(layer_err(
                            i,
                            format!("conv2d expects {in_channels} input channels, previous layer gives {c}"),
                        ));
                    }
                    if kernel_h == 0 || kernel_w == 0 || out_channels == 0 {
                        return Err(layer_err(i, "conv2d extents must be positive"));
                    }
                    self.check_weights(i, layer, &[kernel_h, kernel_w, in_channels, out_channels], out_channels)?;
                    let g = layers::conv_geometry(h, w, kernel_h, kernel_w, stride, padding)
                        .map_err(|e| layer_err(i, e.to_string()))?;
                    vec![g.out_h, g.out_w, out_channels]
                }
                LayerSpec::Maxpool2d { window, stride } => {
                    let &[h, w, c] = shape.as_slice() else {
                        return Err(layer_err(i, format!("maxpool2d needs H x W x C input, got {shape:?}")));
                    };
                    let (oh, ow) = layers::pool_geometry(h, w, window, stride)
                        .map_err(|e| layer_err(i, e.to_string()))?;
                    vec![oh, ow, c]
                }
                LayerSpec::Dense {
                    in_features,
                    out_features,
                    ..
                } => {
                    if shape != [in_features] {
                        return Err(layer_err(
                            i,
                            format!("dense expects flat input of width {in_features}, previous layer gives {shape:?}"),
                        ));
                    }
                    if out_features == 0 {
                        return Err(layer_err(i, "dense output width must be positive"));
                    }
                    self.check_weights(i, layer, &[in_features, out_features], out_features)?;
                    vec![out_features]
                }
                LayerSpec::Relu => shape,
                LayerSpec::Flatten => vec![shape.iter().product()],
                LayerSpec::Softmax => {
                    if i != last {
                        return Err(layer_err(i, "softmax may only be the final layer"));
                    }
                    if shape.len() != 1 {
                        return Err(layer_err(i, format!("softmax needs flat input, got {shape:?}")));
                    }
                    shape
                }
            };
            shapes.push(shape.clone());
        }
        if shape != [self.class_count] {
            return Err(layer_err(
                last,
                format!("final output {shape:?} does not match class_count {}", self.class_count),
            ));
        }
        Ok(shapes)
    }

    fn check_weights(&self, i: usize, layer: &LayerSpec, kernel_shape: &[usize], bias_len: usize) -> Result<()> {
        let (kernel, bias) = layer.weight_names().expect("weighted layer");
        for (name, expected) in [(kernel, kernel_shape.to_vec()), (bias, vec![bias_len])] {
            let w = self
                .weights
                .get(name)
                .ok_or_else(|| layer_err(i, format!("{} references missing weight \"{name}\"", layer.kind())))?;
            if w.shape() != expected.as_slice() {
                return Err(layer_err(
                    i,
                    format!("weight \"{name}\" has shape {:?}, expected {expected:?}", w.shape()),
                ));
            }
        }
        Ok(())
    }

    fn weight(&self, name: &str) -> Result<&Tensor> {
        self.weights
            .get(name)
            .ok_or_else(|| Error::InvalidModel(format!("missing weight \"{name}\"")))
    }

    /// Stable in-process identity of the architecture and weight values.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.layers.hash(&mut h);
        self.input_shape.hash(&mut h);
        self.class_count.hash(&mut h);
        for (name, w) in &self.weights {
            name.hash(&mut h);
            w.shape().hash(&mut h);
            for v in w.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let s = input.shape();
        if s.len() != 4 {
            return Err(Error::shape(
                "model_forward",
                "input rank",
                "4 (N x H x W x C)",
                format!("{} ({s:?})", s.len()),
            ));
        }
        for (axis, (&got, &want)) in ["height", "width", "channels"]
            .iter()
            .zip(s[1..].iter().zip(&self.input_shape))
        {
            if got != want {
                return Err(Error::shape("model_forward", format!("input {axis}"), want, got));
            }
        }
        Ok(())
    }

    fn apply_layer(&self, layer: &LayerSpec, x: &Tensor) -> Result<(Tensor, Option<Vec<usize>>)> {
        Ok(match layer {
            LayerSpec::Conv2d {
                stride,
                padding,
                weight,
                bias,
                ..
            } => (
                layers::conv2d_forward(x, self.weight(weight)?, self.weight(bias)?, *stride, *padding)?,
                None,
            ),
            LayerSpec::Maxpool2d { window, stride } => {
                let p = layers::maxpool2d_forward_with_argmax(x, *window, *stride)?;
                (p.output, Some(p.argmax))
            }
            LayerSpec::Dense { weight, bias, .. } => (
                layers::dense_forward(x, self.weight(weight)?, self.weight(bias)?)?,
                None,
            ),
            LayerSpec::Relu => (layers::relu_forward(x), None),
            LayerSpec::Flatten => {
                let n = x.batch();
                let d = x.len() / n;
                (x.clone().reshape(vec![n, d])?, None)
            }
            LayerSpec::Softmax => (layers::softmax(x)?, None),
        })
    }

    fn ends_in_softmax(&self) -> bool {
        matches!(self.layers.last(), Some(LayerSpec::Softmax))
    }

    /// Runs the network on an `N x H x W x C` batch, keeping every activation.
    pub fn forward(&self, input: &Tensor) -> Result<ForwardOutput> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut argmax = Vec::with_capacity(self.layers.len());
        activations.push(input.clone());
        for layer in &self.layers {
            let (out, am) = self.apply_layer(layer, activations.last().expect("non-empty"))?;
            activations.push(out);
            argmax.push(am);
        }
        let (logits, probabilities) = if self.ends_in_softmax() {
            let n = activations.len();
            (activations[n - 2].clone(), activations[n - 1].clone())
        } else {
            let logits = activations.last().expect("non-empty").clone();
            let p = layers::softmax(&logits)?;
            (logits, p)
        };
        Ok(ForwardOutput {
            probabilities,
            logits,
            trace: ForwardTrace {
                fingerprint: self.fingerprint(),
                activations,
                argmax,
            },
        })
    }

    /// Logits of a batch without retaining intermediate activations.
    pub fn logits(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let body = if self.ends_in_softmax() {
            &self.layers[..self.layers.len() - 1]
        } else {
            &self.layers[..]
        };
        let mut x = input.clone();
        for layer in body {
            x = self.apply_layer(layer, &x)?.0;
        }
        Ok(x)
    }

    /// Class probabilities of a batch without retaining intermediate activations.
    pub fn probabilities(&self, input: &Tensor) -> Result<Tensor> {
        layers::softmax(&self.logits(input)?)
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        if trace.layer_count() != self.layers.len() {
            return Err(Error::StaleTrace(format!(
                "trace has {} layers, model has {}",
                trace.layer_count(),
                self.layers.len()
            )));
        }
        if trace.fingerprint != self.fingerprint() {
            return Err(Error::StaleTrace(
                "model weights or layers changed since the forward pass".into(),
            ));
        }
        Ok(())
    }

    fn trace_logits<'t>(&self, trace: &'t ForwardTrace) -> &'t Tensor {
        let n = trace.activations.len();
        if self.ends_in_softmax() {
            &trace.activations[n - 2]
        } else {
            &trace.activations[n - 1]
        }
    }

    /// Reverse pass from a seed gradient on the logits. Returns the input
    /// gradient when `want_input` and weight gradients when `want_weights`.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        logit_grad: Tensor,
        want_input: bool,
        want_weights: bool,
    ) -> Result<(Option<Tensor>, WeightGrads)> {
        self.check_trace(trace)?;
        let logits = self.trace_logits(trace);
        if logit_grad.shape() != logits.shape() {
            return Err(Error::shape(
                "backward",
                "logit gradient shape",
                format!("{:?}", logits.shape()),
                format!("{:?}", logit_grad.shape()),
            ));
        }
        let body = if self.ends_in_softmax() {
            self.layers.len() - 1
        } else {
            self.layers.len()
        };
        let mut grads = WeightGrads::new();
        let mut accumulate = |name: &str, g: Tensor| {
            if let Some(acc) = grads.get_mut(name) {
                for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += v;
                }
            } else {
                grads.insert(name.to_string(), g);
            }
        };
        let mut g = logit_grad;
        for i in (0..body).rev() {
            let x = trace.layer_input(i);
            let need_x = want_input || i > 0;
            g = match &self.layers[i] {
                LayerSpec::Conv2d {
                    stride,
                    padding,
                    weight,
                    bias,
                    ..
                } => {
                    if !need_x && !want_weights {
                        break;
                    }
                    let r = layers::conv2d_backward(
                        x,
                        self.weight(weight)?,
                        self.weight(bias)?,
                        *stride,
                        *padding,
                        &g,
                        need_x,
                    )?;
                    if want_weights {
                        accumulate(weight, r.kernel);
                        accumulate(bias, r.bias);
                    }
                    match r.input {
                        Some(gx) => gx,
                        None => break,
                    }
                }
                LayerSpec::Dense { weight, bias, .. } => {
                    if !need_x && !want_weights {
                        break;
                    }
                    let r = layers::dense_backward(x, self.weight(weight)?, self.weight(bias)?, &g, need_x)?;
                    if want_weights {
                        accumulate(weight, r.weight);
                        accumulate(bias, r.bias);
                    }
                    match r.input {
                        Some(gx) => gx,
                        None => break,
                    }
                }
                LayerSpec::Maxpool2d { .. } => {
                    let argmax = trace.argmax(i).ok_or_else(|| {
                        Error::StaleTrace(format!("no argmax recorded for maxpool layer {i}"))
                    })?;
                    layers::maxpool2d_backward(x.shape(), argmax, &g)?
                }
                LayerSpec::Relu => layers::relu_backward(x, &g)?,
                LayerSpec::Flatten => g.reshape(x.shape().to_vec())?,
                LayerSpec::Softmax => unreachable!("softmax is only the final layer"),
            };
        }
        let input_grad = want_input.then_some(g);
        Ok((input_grad, grads))
    }

    fn check_class(&self, class_index: usize) -> Result<()> {
        if class_index >= self.class_count {
            return Err(Error::Validation(format!(
                "class index {class_index} out of range for {} classes",
                self.class_count
            )));
        }
        Ok(())
    }

    /// Gradient of each sample's score for `class_index` with respect to the
    /// traced input. Same shape as the input.
    pub fn score_gradient(&self, trace: &ForwardTrace, class_index: usize, source: ScoreSource) -> Result<Tensor> {
        self.check_class(class_index)?;
        self.check_trace(trace)?;
        let logits = self.trace_logits(trace);
        let k = self.class_count;
        let seed = match source {
            ScoreSource::Logit => Tensor::from_fn(logits.shape().to_vec(), |i| {
                if i % k == class_index {
                    1.0
                } else {
                    0.0
                }
            }),
            ScoreSource::Probability => {
                // d p_c / d z_j = p_c (delta_cj - p_j)
                let p = layers::softmax(logits)?;
                let pd = p.data();
                Tensor::from_fn(logits.shape().to_vec(), |i| {
                    let pc = pd[i - i % k + class_index];
                    let delta = if i % k == class_index { 1.0 } else { 0.0 };
                    pc * (delta - pd[i])
                })
            }
        };
        let (g, _) = self.backward(trace, seed, true, false)?;
        Ok(g.expect("input gradient requested"))
    }

    /// Gradient of the pre-softmax score for `class_index` with respect to the input.
    pub fn input_gradient(&self, trace: &ForwardTrace, class_index: usize) -> Result<Tensor> {
        self.score_gradient(trace, class_index, ScoreSource::Logit)
    }

    /// Mean cross-entropy of a batch against one-hot (or soft) targets.
    pub fn loss(&self, inputs: &Tensor, targets: &Tensor) -> Result<f64> {
        let logits = self.logits(inputs)?;
        self.check_targets(&logits, targets)?;
        cross_entropy(&logits, targets)
    }

    fn check_targets(&self, logits: &Tensor, targets: &Tensor) -> Result<()> {
        if targets.shape() != logits.shape() {
            return Err(Error::shape(
                "train_step",
                "label batch shape",
                format!("{:?}", logits.shape()),
                format!("{:?}", targets.shape()),
            ));
        }
        Ok(())
    }

    /// Mean-loss gradients for a batch without touching the weights.
    pub fn loss_gradients(&self, inputs: &Tensor, targets: &Tensor) -> Result<(f64, WeightGrads)> {
        let out = self.forward(inputs)?;
        self.check_targets(&out.logits, targets)?;
        let loss = cross_entropy(&out.logits, targets)?;
        let n = inputs.batch() as f64;
        let seed = Tensor::from_fn(out.logits.shape().to_vec(), |i| {
            (out.probabilities.data()[i] - targets.data()[i]) / n
        });
        let (_, grads) = self.backward(&out.trace, seed, false, true)?;
        Ok((loss, grads))
    }

    /// One SGD step `w <- w - lr * dloss/dw` on the mean cross-entropy of the
    /// batch. Returns the loss measured before the update.
    pub fn train_step(&mut self, inputs: &Tensor, targets: &Tensor, learning_rate: f64) -> Result<f64> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::Validation(format!(
                "learning rate must be finite and >= 0, got {learning_rate}"
            )));
        }
        let (loss, grads) = self.loss_gradients(inputs, targets)?;
        if learning_rate > 0.0 {
            for (name, g) in grads {
                let w = self.weights.get_mut(&name).expect("gradient for known weight");
                for (wv, gv) in w.data_mut().iter_mut().zip(g.data()) {
                    *wv -= learning_rate * gv;
                }
            }
        }
        Ok(loss)
    }
}

fn cross_entropy(logits: &Tensor, targets: &Tensor) -> Result<f64> {
    let logp = layers::log_softmax(logits)?;
    let n = logits.batch() as f64;
    let total: f64 = logp
        .data()
        .iter()
        .zip(targets.data())
        .map(|(lp, y)| if *y == 0.0 { 0.0 } else { -y * lp })
        .sum();
    Ok(total / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_model(w: Vec<f64>, d: usize, k: usize) -> Model {
        let mut weights = BTreeMap::new();
        weights.insert("w".to_string(), Tensor::new(vec![d, k], w).unwrap());
        weights.insert("b".to_string(), Tensor::zeros(vec![k]));
        Model::new(
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    in_features: d,
                    out_features: k,
                    weight: "w".into(),
                    bias: "b".into(),
                },
                LayerSpec::Softmax,
            ],
            weights,
            [1, d, 1],
            k,
        )
        .unwrap()
    }

    #[test]
    fn zero_dense_is_uniform() {
        let m = linear_model(vec![0.0; 12], 4, 3);
        let out = m.forward(&Tensor::full(vec![2, 1, 4, 1], 0.7)).unwrap();
        assert!(out.probabilities.data().iter().all(|&p| p == 1.0 / 3.0));
    }

    #[test]
    fn linear_gradient_is_weight_column() {
        let w: Vec<f64> = (0..12).map(|i| i as f64 * 0.5 - 2.0).collect();
        let m = linear_model(w.clone(), 4, 3);
        let out = m.forward(&Tensor::full(vec![1, 1, 4, 1], 0.3)).unwrap();
        for c in 0..3 {
            let g = m.input_gradient(&out.trace, c).unwrap();
            let expected: Vec<f64> = (0..4).map(|d| w[d * 3 + c]).collect();
            assert_eq!(g.data(), expected.as_slice());
            assert_eq!(g.shape(), &[1, 1, 4, 1]);
        }
    }

    #[test]
    fn negative_relu_net_has_zero_gradient() {
        let mut weights = BTreeMap::new();
        weights.insert("w1".to_string(), Tensor::full(vec![4, 3], 1.0));
        weights.insert("b1".to_string(), Tensor::full(vec![3], -100.0));
        weights.insert("w2".to_string(), Tensor::full(vec![3, 2], 1.0));
        weights.insert("b2".to_string(), Tensor::zeros(vec![2]));
        let m = Model::new(
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { in_features: 4, out_features: 3, weight: "w1".into(), bias: "b1".into() },
                LayerSpec::Relu,
                LayerSpec::Dense { in_features: 3, out_features: 2, weight: "w2".into(), bias: "b2".into() },
            ],
            weights,
            [2, 2, 1],
            2,
        )
        .unwrap();
        let out = m.forward(&Tensor::full(vec![1, 2, 2, 1], 0.5)).unwrap();
        let g = m.input_gradient(&out.trace, 1).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn class_out_of_range() {
        let m = linear_model(vec![0.0; 8], 4, 2);
        let out = m.forward(&Tensor::zeros(vec![1, 1, 4, 1])).unwrap();
        assert!(m.input_gradient(&out.trace, 2).is_err());
    }

    #[test]
    fn stale_trace_rejected() {
        let mut m = linear_model(vec![0.1; 8], 4, 2);
        let x = Tensor::full(vec![1, 1, 4, 1], 1.0);
        let out = m.forward(&x).unwrap();
        let y = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        m.train_step(&x, &y, 0.1).unwrap();
        let err = m.input_gradient(&out.trace, 0).unwrap_err();
        assert!(matches!(err, Error::StaleTrace(_)), "{err}");
    }

    #[test]
    fn input_shape_mismatch() {
        let m = linear_model(vec![0.0; 8], 4, 2);
        let err = m.forward(&Tensor::zeros(vec![1, 1, 5, 1])).unwrap_err();
        assert!(err.to_string().contains("input width"), "{err}");
    }

    #[test]
    fn softmax_only_last() {
        let mut weights = BTreeMap::new();
        weights.insert("w".to_string(), Tensor::zeros(vec![2, 2]));
        weights.insert("b".to_string(), Tensor::zeros(vec![2]));
        let err = Model::new(
            vec![
                LayerSpec::Flatten,
                LayerSpec::Softmax,
                LayerSpec::Dense { in_features: 2, out_features: 2, weight: "w".into(), bias: "b".into() },
            ],
            weights,
            [1, 2, 1],
            2,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidLayer { layer: 1, .. }), "{err}");
    }

    #[test]
    fn missing_weight_names_layer() {
        let err = Model::new(
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { in_features: 2, out_features: 2, weight: "w".into(), bias: "b".into() },
            ],
            BTreeMap::new(),
            [1, 2, 1],
            2,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidLayer { layer: 1, .. }), "{err}");
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let w: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
        let mut m = linear_model(w, 4, 2);
        let before = m.clone();
        let x = Tensor::from_fn(vec![3, 1, 4, 1], |i| i as f64 * 0.1);
        let y = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        m.train_step(&x, &y, 0.0).unwrap();
        for (name, w) in &m.weights {
            let a: Vec<u64> = w.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = before.weights[name].data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "{name}");
        }
    }

    #[test]
    fn linear_update_closed_form() {
        let w: Vec<f64> = vec![0.2, -0.1, 0.4, 0.3, -0.5, 0.05, 0.0, 0.7];
        let mut m = linear_model(w.clone(), 4, 2);
        let xv = [0.5, -1.0, 2.0, 0.25];
        let x = Tensor::new(vec![1, 1, 4, 1], xv.to_vec()).unwrap();
        let y = [0.0, 1.0];
        let lr = 0.3;
        // z = x W, p = softmax(z)
        let z: Vec<f64> = (0..2).map(|k| (0..4).map(|d| xv[d] * w[d * 2 + k]).sum()).collect();
        let m0 = z[0].max(z[1]);
        let e: Vec<f64> = z.iter().map(|v| (v - m0).exp()).collect();
        let p: Vec<f64> = e.iter().map(|v| v / (e[0] + e[1])).collect();
        m.train_step(&x, &Tensor::new(vec![1, 2], y.to_vec()).unwrap(), lr).unwrap();
        for d in 0..4 {
            for k in 0..2 {
                let expected = w[d * 2 + k] - lr * (p[k] - y[k]) * xv[d];
                let got = m.weights["w"].data()[d * 2 + k];
                assert!((got - expected).abs() <= 1e-12, "w[{d},{k}] {got} vs {expected}");
            }
        }
        for k in 0..2 {
            let got = m.weights["b"].data()[k];
            assert!((got - (-lr * (p[k] - y[k]))).abs() <= 1e-12);
        }
    }

    #[test]
    fn bad_label_shape() {
        let mut m = linear_model(vec![0.0; 8], 4, 2);
        let x = Tensor::zeros(vec![2, 1, 4, 1]);
        let err = m.train_step(&x, &Tensor::zeros(vec![2, 3]), 0.1).unwrap_err();
        assert!(err.to_string().contains("label batch shape"), "{err}");
    }
}
