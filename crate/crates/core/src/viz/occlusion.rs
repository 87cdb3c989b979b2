//! Partial occlusion: slide a constant-valued square over the input and
//! record the class probability of each occluded variant.

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;
use crate::viz::render::GridLayout;
use crate::viz::settings::{SettingSpec, Settings, SettingsSchema};
use crate::viz::{ModelContext, RawMap, Visualizer, VisualizerDescriptor, CLASS_SELECTION};

/// Occluded variants evaluated per forward pass.
const BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionSettings {
    pub window: usize,
    pub stride: usize,
    pub occlusion_value: f64,
}

impl OcclusionSettings {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let positive = |key: &str| -> Result<usize> {
            let v = s.int(key)?;
            usize::try_from(v)
                .ok()
                .filter(|&v| v >= 1)
                .ok_or_else(|| Error::setting(key, format!("must be ≥ 1 (got {v})")))
        };
        Ok(OcclusionSettings {
            window: positive("window")?,
            stride: positive("stride")?,
            occlusion_value: s.float("occlusion_value")?,
        })
    }

    /// Checks the window fits the image and windows tile it without gaps.
    pub fn check(&self, height: usize, width: usize) -> Result<()> {
        if self.window == 0 {
            return Err(Error::setting("window", "must be ≥ 1 (got 0)"));
        }
        if self.window > height.min(width) {
            return Err(Error::setting(
                "window",
                format!("must be ≤ {} (min of image height and width), got {}", height.min(width), self.window),
            ));
        }
        if self.stride == 0 || self.stride > self.window {
            return Err(Error::setting(
                "stride",
                format!("must be in [1, window = {}], got {}", self.window, self.stride),
            ));
        }
        Ok(())
    }

    /// `(rows, cols)` of the output grid.
    pub fn grid(&self, height: usize, width: usize) -> (usize, usize) {
        (
            (height - self.window) / self.stride + 1,
            (width - self.window) / self.stride + 1,
        )
    }
}

/// Top-left corners of every occluding window, row-major.
pub fn window_anchors(height: usize, width: usize, settings: &OcclusionSettings) -> Vec<(usize, usize)> {
    let (rows, cols) = settings.grid(height, width);
    (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i * settings.stride, j * settings.stride)))
        .collect()
}

/// Copy of a `1 x H x W x C` input with one window set to `value` in all channels.
pub fn occlude(input: &Tensor, top: usize, left: usize, window: usize, value: f64) -> Tensor {
    let &[_, h, w, c] = input.shape() else { panic!("occlude expects NHWC") };
    let mut out = input.clone();
    let data = out.data_mut();
    for y in top..(top + window).min(h) {
        let start = (y * w + left) * c;
        let end = (y * w + (left + window).min(w)) * c;
        data[start..end].fill(value);
    }
    out
}

fn single_image_dims(input: &Tensor) -> Result<(usize, usize)> {
    match input.shape() {
        &[1, h, w, _] => Ok((h, w)),
        other => Err(Error::shape("occlusion_map", "input shape", "1 x H x W x C", format!("{other:?}"))),
    }
}

/// Probability of `class_index` for every occluded variant, as a `rows x cols` grid.
/// Variants are evaluated in batches.
pub fn occlusion_map(model: &Model, input: &Tensor, class_index: usize, settings: &OcclusionSettings) -> Result<Tensor> {
    let (h, w) = single_image_dims(input)?;
    settings.check(h, w)?;
    if class_index >= model.class_count {
        return Err(Error::Validation(format!(
            "class index {class_index} out of range for {} classes",
            model.class_count
        )));
    }
    let anchors = window_anchors(h, w, settings);
    let k = model.class_count;
    let mut cells = Vec::with_capacity(anchors.len());
    for chunk in anchors.chunks(BATCH) {
        let variants: Vec<Tensor> = chunk
            .iter()
            .map(|&(y, x)| occlude(input, y, x, settings.window, settings.occlusion_value))
            .collect();
        let probs = model.probabilities(&Tensor::concat_batch(&variants)?)?;
        cells.extend((0..chunk.len()).map(|n| probs.data()[n * k + class_index]));
    }
    let (rows, cols) = settings.grid(h, w);
    Tensor::new(vec![rows, cols], cells)
}

pub struct Occlusion {
    descriptor: VisualizerDescriptor,
}

impl Occlusion {
    pub fn new(ctx: &ModelContext) -> Self {
        let [h, w, _] = ctx.input_shape;
        let side = h.min(w);
        let window = (side / 4).max(1);
        let stride = (window / 2).max(1);
        let schema = SettingsSchema::new(vec![
            SettingSpec::int("window", "Occluder size (px)", window as i64, Some(1), Some(side as i64)),
            SettingSpec::int("stride", "Stride (px)", stride as i64, Some(1), Some(side as i64)),
            SettingSpec::float("occlusion_value", "Fill value", ctx.scaling.midpoint(), None, None),
            SettingSpec::int(CLASS_SELECTION, "Top classes", 3, Some(1), None),
        ])
        .expect("occlusion schema is well formed");
        Occlusion {
            descriptor: VisualizerDescriptor {
                name: "occlusion".into(),
                description: "Slides a square occluder over the image; bright cells are regions whose \
                              masking leaves the class probability high."
                    .into(),
                settings: schema,
            },
        }
    }
}

impl Visualizer for Occlusion {
    fn descriptor(&self) -> &VisualizerDescriptor {
        &self.descriptor
    }

    fn check_settings(&self, input_shape: [usize; 3], settings: &Settings) -> Result<()> {
        OcclusionSettings::from_settings(settings)?.check(input_shape[0], input_shape[1])
    }

    fn compute(&self, model: &Model, input: &Tensor, class_index: usize, settings: &Settings) -> Result<RawMap> {
        let s = OcclusionSettings::from_settings(settings)?;
        Ok(RawMap {
            values: occlusion_map(model, input, class_index, &s)?,
            layout: GridLayout::Anchored { stride: s.stride },
        })
    }
}
