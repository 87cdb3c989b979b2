//! Visualizer plugins and the registry that runs them.
//!
//! A visualizer describes itself with a [`VisualizerDescriptor`] (name,
//! description, settings schema) and computes a raw map for one class of one
//! image. The registry handles the shared parts: base probabilities, top-k
//! class selection and rendering.

pub mod occlusion;
pub mod render;
pub mod saliency;
pub mod settings;

use indexmap::IndexMap;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::io::labels::{decode_predictions, LabelTable, Prediction};
use crate::io::preprocess::Scaling;
use crate::model::Model;
use crate::tensor::Tensor;

pub use occlusion::{occlusion_map, Occlusion, OcclusionSettings};
pub use render::{render_heatmap, GridLayout};
pub use saliency::{saliency_map, ChannelReduce, Saliency, SaliencySettings};
pub use settings::{validate_settings, SettingSpec, SettingType, SettingValue, Settings, SettingsSchema};

/// Setting key every shipped visualizer uses for top-k class selection.
pub const CLASS_SELECTION: &str = "class_selection";
const DEFAULT_TOP_K: usize = 3;

/// Facts about the loaded model that visualizer defaults depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelContext {
    pub input_shape: [usize; 3],
    pub scaling: Scaling,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VisualizerDescriptor {
    pub name: String,
    pub description: String,
    pub settings: SettingsSchema,
}

/// Unrendered output of a visualizer for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMap {
    pub values: Tensor,
    pub layout: GridLayout,
}

pub trait Visualizer: Send + Sync {
    fn descriptor(&self) -> &VisualizerDescriptor;

    /// Cross-field and input-dependent checks beyond the schema.
    fn check_settings(&self, _input_shape: [usize; 3], _settings: &Settings) -> Result<()> {
        Ok(())
    }

    fn compute(&self, model: &Model, input: &Tensor, class_index: usize, settings: &Settings) -> Result<RawMap>;
}

/// One rendered map: a class of one input image.
#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub class_index: usize,
    pub label: String,
    /// Unoccluded forward-pass probability of the class.
    pub probability: f64,
    pub raw: Tensor,
    pub png: Vec<u8>,
}

#[derive(Default)]
pub struct Registry {
    visualizers: IndexMap<String, Box<dyn Visualizer>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Occlusion and saliency, in that order.
    pub fn with_defaults(ctx: &ModelContext) -> Self {
        let mut r = Self::new();
        r.register(Box::new(Occlusion::new(ctx))).expect("fresh registry");
        r.register(Box::new(Saliency::new())).expect("fresh registry");
        r
    }

    pub fn register(&mut self, visualizer: Box<dyn Visualizer>) -> Result<()> {
        let name = visualizer.descriptor().name.clone();
        if self.visualizers.contains_key(&name) {
            return Err(Error::DuplicateVisualizer(name));
        }
        self.visualizers.insert(name, visualizer);
        Ok(())
    }

    /// Descriptors in registration order.
    pub fn list(&self) -> Vec<&VisualizerDescriptor> {
        self.visualizers.values().map(|v| v.descriptor()).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.visualizers.keys().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn Visualizer> {
        self.visualizers
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::UnknownVisualizer {
                name: name.to_string(),
                available: self.names(),
            })
    }

    /// Validates raw settings against a visualizer's schema and its extra checks.
    pub fn validate(&self, name: &str, input_shape: [usize; 3], values: &Map<String, Value>) -> Result<Settings> {
        let v = self.get(name)?;
        let settings = validate_settings(&v.descriptor().settings, values)?;
        v.check_settings(input_shape, &settings)?;
        Ok(settings)
    }

    /// Runs a visualizer for the top-k classes of a `1 x H x W x C` input.
    pub fn run_visualizer(
        &self,
        name: &str,
        model: &Model,
        labels: &LabelTable,
        input: &Tensor,
        settings: &Settings,
    ) -> Result<Vec<MapResult>> {
        let k = match settings.get(CLASS_SELECTION) {
            Some(_) => usize::try_from(settings.int(CLASS_SELECTION)?)
                .ok()
                .filter(|&k| k >= 1)
                .ok_or_else(|| Error::setting(CLASS_SELECTION, "must be ≥ 1"))?,
            None => DEFAULT_TOP_K,
        };
        let probs = model.probabilities(input)?;
        let top = decode_predictions(&probs, labels, k)?;
        self.render_classes(name, model, input, settings, &top)
    }

    /// Runs a visualizer for one explicitly chosen class.
    pub fn run_for_class(
        &self,
        name: &str,
        model: &Model,
        labels: &LabelTable,
        input: &Tensor,
        settings: &Settings,
        class_index: usize,
    ) -> Result<MapResult> {
        let probs = model.probabilities(input)?;
        let label = labels
            .get(class_index)
            .ok_or_else(|| Error::Validation(format!("class index {class_index} has no label")))?;
        let pred = Prediction {
            class_index,
            label: label.to_string(),
            probability: probs.data()[class_index],
        };
        let mut out = self.render_classes(name, model, input, settings, std::slice::from_ref(&pred))?;
        Ok(out.remove(0))
    }

    fn render_classes(
        &self,
        name: &str,
        model: &Model,
        input: &Tensor,
        settings: &Settings,
        classes: &[Prediction],
    ) -> Result<Vec<MapResult>> {
        let v = self.get(name)?;
        let &[1, h, w, _] = input.shape() else {
            return Err(Error::shape("run_visualizer", "input shape", "1 x H x W x C", format!("{:?}", input.shape())));
        };
        classes
            .iter()
            .map(|p| {
                let raw = v.compute(model, input, p.class_index, settings)?;
                let png = render_heatmap(&raw.values, (h, w), raw.layout, None, 1.0)?;
                Ok(MapResult {
                    class_index: p.class_index,
                    label: p.label.clone(),
                    probability: p.probability,
                    raw: raw.values,
                    png,
                })
            })
            .collect()
    }
}
