//! The visualization pipeline shared by the HTTP service and the CLI.

use std::path::Path;

use lensbox_core::io::{load_checkpoint, preprocess_image, Checkpoint, LabelTable, PreprocessSpec};
use lensbox_core::viz::{MapResult, ModelContext, Registry, Settings, VisualizerDescriptor};
use lensbox_core::{Model, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// A loaded model with its labels, preprocessing and visualizers. Read-only
/// after construction.
pub struct Engine {
    pub name: String,
    pub model: Model,
    pub labels: LabelTable,
    pub preprocess: PreprocessSpec,
    pub registry: Registry,
}

impl Engine {
    /// `labels` overrides whatever the checkpoint carries.
    pub fn new(name: impl Into<String>, checkpoint: Checkpoint, labels: Option<LabelTable>) -> Result<Self> {
        let labels = match labels {
            Some(l) => {
                l.check_class_count(checkpoint.model.class_count)?;
                l
            }
            None => checkpoint.labels,
        };
        let registry = Registry::with_defaults(&ModelContext {
            input_shape: checkpoint.model.input_shape,
            scaling: checkpoint.preprocess.scaling,
        });
        Ok(Engine {
            name: name.into(),
            model: checkpoint.model,
            labels,
            preprocess: checkpoint.preprocess,
            registry,
        })
    }

    /// Loads a checkpoint and an optional one-label-per-line file.
    pub fn load(checkpoint: &Path, labels: Option<&Path>) -> Result<Self> {
        let ckpt = load_checkpoint(checkpoint)?;
        let labels = labels.map(LabelTable::load).transpose()?;
        let name = checkpoint
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into());
        Engine::new(name, ckpt, labels)
    }

    pub fn visualizers(&self) -> Vec<&VisualizerDescriptor> {
        self.registry.list()
    }

    /// Schema defaults merged with `values`, then validated.
    pub fn settings(&self, visualizer: &str, values: &Map<String, Value>) -> Result<Settings> {
        self.registry.validate(visualizer, self.model.input_shape, values)
    }

    /// Preprocesses one PNG and renders the visualizer for its top-k classes.
    pub fn visualize(&self, visualizer: &str, settings: &Settings, png: &[u8]) -> Result<Vec<MapResult>> {
        let input = preprocess_image(png, &self.preprocess)?;
        self.registry
            .run_visualizer(visualizer, &self.model, &self.labels, &input, settings)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub label: String,
    pub class_index: usize,
    /// Unoccluded probability of the class.
    pub probability: f64,
    pub png_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobEntry {
    pub image_id: String,
    pub classes: Vec<ClassEntry>,
}

/// One row per input image, one column per selected class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualizationJobResult {
    pub job_id: String,
    pub visualizer: String,
    pub settings: Map<String, Value>,
    pub entries: Vec<JobEntry>,
}

/// Random lowercase hex id of `bits` bits (a multiple of 4).
pub fn random_hex_id(bits: u32) -> String {
    let v: u128 = rand::random();
    let digits = (bits / 4) as usize;
    format!("{v:032x}")[32 - digits..].to_string()
}

pub fn is_hex_id(s: &str) -> bool {
    !s.is_empty() && s.len() <= 32 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}
