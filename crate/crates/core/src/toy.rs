//! Desk-scale "tank vs. empty field" task.
//!
//! Class `tank` images carry a bright 8x8 square somewhere on a textured
//! background; class `empty` images are background only. A model that has
//! learned the intended feature should be sensitive to the square and
//! indifferent to the texture, which the occlusion and saliency maps can
//! confirm.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::time::{Duration, Instant};

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::labels::LabelTable;
use crate::io::preprocess::{ChannelMode, PreprocessSpec, ResizeMode, Scaling};
use crate::layers::Padding;
use crate::model::{LayerSpec, Model};
use crate::tensor::Tensor;

pub const SIDE: usize = 28;
pub const SQUARE: usize = 8;
pub const TANK: usize = 0;
pub const EMPTY: usize = 1;

pub fn labels() -> LabelTable {
    LabelTable::new(vec!["tank".into(), "empty".into()]).expect("static labels")
}

pub fn preprocess_spec() -> PreprocessSpec {
    PreprocessSpec {
        height: SIDE,
        width: SIDE,
        channels: ChannelMode::Grayscale,
        resize: ResizeMode::Nearest,
        scaling: Scaling::Unit,
    }
}

#[derive(Debug, Clone)]
pub struct ToyImage {
    /// 8-bit grayscale pixels, row-major.
    pub pixels: Vec<u8>,
    pub label: usize,
    /// Top-left corner `(row, col)` of the square for tank images.
    pub square: Option<(usize, usize)>,
}

impl ToyImage {
    /// `1 x 28 x 28 x 1` tensor with unit scaling, identical to what
    /// preprocessing the PNG form yields.
    pub fn tensor(&self) -> Tensor {
        Tensor::new(
            vec![1, SIDE, SIDE, 1],
            self.pixels.iter().map(|&p| Scaling::Unit.apply(p as f64)).collect(),
        )
        .expect("fixed shape")
    }

    pub fn png(&self) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        PngEncoder::new(&mut buf)
            .write_image(&self.pixels, SIDE as u32, SIDE as u32, ExtendedColorType::L8)
            .expect("in-memory png encode");
        buf.into_inner()
    }

    pub fn in_square(&self, row: usize, col: usize) -> bool {
        self.square
            .is_some_and(|(r, c)| (r..r + SQUARE).contains(&row) && (c..c + SQUARE).contains(&col))
    }
}

fn background(rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Diagonal stripes of random frequency and phase plus per-pixel noise.
    let fy: f64 = rng.gen_range(0.2..0.9);
    let fx: f64 = rng.gen_range(0.2..0.9);
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let level: f64 = rng.gen_range(0.15..0.3);
    (0..SIDE * SIDE)
        .map(|i| {
            let (y, x) = ((i / SIDE) as f64, (i % SIDE) as f64);
            let stripe = 0.12 * (fy * y + fx * x + phase).sin();
            let noise: f64 = rng.gen_range(-0.12..0.12);
            (level + stripe + noise).clamp(0.0, 0.55)
        })
        .collect()
}

/// `count` images alternating tank / empty, reproducible from `seed`.
pub fn tank_dataset(count: usize, seed: u64) -> Vec<ToyImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let mut values = background(&mut rng);
            let label = if i % 2 == 0 { TANK } else { EMPTY };
            let square = (label == TANK).then(|| {
                let r = rng.gen_range(0..=SIDE - SQUARE);
                let c = rng.gen_range(0..=SIDE - SQUARE);
                for y in r..r + SQUARE {
                    for x in c..c + SQUARE {
                        values[y * SIDE + x] = rng.gen_range(0.85..1.0);
                    }
                }
                (r, c)
            });
            ToyImage {
                pixels: values.iter().map(|v| (v * 255.0).round() as u8).collect(),
                label,
                square,
            }
        })
        .collect()
}

fn uniform_init(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// conv3x3(8) - relu - pool2 - conv3x3(8) - relu - global max pool - dense(2) - softmax
pub fn toy_architecture(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = BTreeMap::new();
    weights.insert("conv1.kernel".to_string(), uniform_init(&mut rng, vec![3, 3, 1, 8], 9));
    weights.insert("conv1.bias".to_string(), Tensor::full(vec![8], 0.01));
    weights.insert("conv2.kernel".to_string(), uniform_init(&mut rng, vec![3, 3, 8, 8], 72));
    weights.insert("conv2.bias".to_string(), Tensor::full(vec![8], 0.01));
    weights.insert("dense.weight".to_string(), uniform_init(&mut rng, vec![8, 2], 8));
    weights.insert("dense.bias".to_string(), Tensor::zeros(vec![2]));
    let conv = |cin, weight: &str, bias: &str| LayerSpec::Conv2d {
        kernel_h: 3,
        kernel_w: 3,
        in_channels: cin,
        out_channels: 8,
        stride: 1,
        padding: Padding::Valid,
        weight: weight.into(),
        bias: bias.into(),
    };
    Model::new(
        vec![
            conv(1, "conv1.kernel", "conv1.bias"),
            LayerSpec::Relu,
            LayerSpec::Maxpool2d { window: 2, stride: 2 },
            conv(8, "conv2.kernel", "conv2.bias"),
            LayerSpec::Relu,
            LayerSpec::Maxpool2d { window: 11, stride: 11 },
            LayerSpec::Flatten,
            LayerSpec::Dense {
                in_features: 8,
                out_features: 2,
                weight: "dense.weight".into(),
                bias: "dense.bias".into(),
            },
            LayerSpec::Softmax,
        ],
        weights,
        [SIDE, SIDE, 1],
        2,
    )
    .expect("toy architecture is consistent")
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            samples: 400,
            epochs: 12,
            batch_size: 16,
            learning_rate: 0.05,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub elapsed: Duration,
}

fn batch_tensors(images: &[&ToyImage]) -> Result<(Tensor, Tensor)> {
    let inputs = Tensor::concat_batch(&images.iter().map(|i| i.tensor()).collect::<Vec<_>>())?;
    let targets = Tensor::from_fn(vec![images.len(), 2], |i| {
        if images[i / 2].label == i % 2 {
            1.0
        } else {
            0.0
        }
    });
    Ok((inputs, targets))
}

/// Fraction of images whose argmax prediction matches the label.
pub fn accuracy(model: &Model, images: &[ToyImage]) -> Result<f64> {
    let mut correct = 0;
    for chunk in images.chunks(64) {
        let refs: Vec<&ToyImage> = chunk.iter().collect();
        let (x, _) = batch_tensors(&refs)?;
        let p = model.probabilities(&x)?;
        for (n, img) in chunk.iter().enumerate() {
            let row = p.row(n);
            let pred = if row[TANK] >= row[EMPTY] { TANK } else { EMPTY };
            correct += usize::from(pred == img.label);
        }
    }
    Ok(correct as f64 / images.len() as f64)
}

/// Trains the toy architecture with minibatch SGD on a fresh dataset.
pub fn train_toy(config: &TrainConfig) -> Result<(Model, TrainReport)> {
    if config.samples < 2 || config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::Validation("samples >= 2, batch_size >= 1 and epochs >= 1 required".into()));
    }
    let start = Instant::now();
    let data = tank_dataset(config.samples, config.seed);
    let mut model = toy_architecture(config.seed.wrapping_add(1));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(config.batch_size) {
            let refs: Vec<&ToyImage> = idx.iter().map(|&i| &data[i]).collect();
            let (x, y) = batch_tensors(&refs)?;
            total += model.train_step(&x, &y, config.learning_rate)?;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    let train_accuracy = accuracy(&model, &data)?;
    Ok((
        model,
        TrainReport {
            epoch_losses,
            train_accuracy,
            elapsed: start.elapsed(),
        },
    ))
}
