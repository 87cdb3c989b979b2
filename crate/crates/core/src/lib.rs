//! Native CNN inference with occlusion and saliency visualizations.
//!
//! - [`tensor`], [`layers`], [`model`]: dense NHWC tensors, layer kernels,
//!   traced forward pass, reverse-mode gradients and SGD.
//! - [`io`]: `LBX1` checkpoints, label tables, PNG preprocessing, config files.
//! - [`viz`]: the visualizer registry, occlusion and saliency maps, heatmap PNGs.
//! - [`toy`]: a synthetic two-class task for desk-scale experiments.

pub mod error;
pub mod io;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod toy;
pub mod viz;

pub use error::{Error, Result};
pub use model::{ForwardOutput, ForwardTrace, LayerSpec, Model, ScoreSource};
pub use tensor::Tensor;
