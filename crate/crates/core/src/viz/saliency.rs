//! Saliency: magnitude of the class-score gradient at each input pixel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ScoreSource};
use crate::tensor::Tensor;
use crate::viz::render::GridLayout;
use crate::viz::settings::{SettingSpec, Settings, SettingsSchema};
use crate::viz::{RawMap, Visualizer, VisualizerDescriptor, CLASS_SELECTION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelReduce {
    MaxAbs,
    MeanAbs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SaliencySettings {
    pub score_source: ScoreSource,
    pub channel_reduce: ChannelReduce,
}

impl Default for SaliencySettings {
    fn default() -> Self {
        SaliencySettings {
            score_source: ScoreSource::Logit,
            channel_reduce: ChannelReduce::MaxAbs,
        }
    }
}

impl SaliencySettings {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let score_source = match s.choice("score_source")? {
            "logit" => ScoreSource::Logit,
            "probability" => ScoreSource::Probability,
            other => return Err(Error::setting("score_source", format!("must be one of [logit, probability] (got {other})"))),
        };
        let channel_reduce = match s.choice("channel_reduce")? {
            "max_abs" => ChannelReduce::MaxAbs,
            "mean_abs" => ChannelReduce::MeanAbs,
            other => return Err(Error::setting("channel_reduce", format!("must be one of [max_abs, mean_abs] (got {other})"))),
        };
        Ok(SaliencySettings {
            score_source,
            channel_reduce,
        })
    }
}

/// Reduces `|gradient|` over channels, giving an `H x W` map.
pub fn reduce_channels(gradient: &Tensor, reduce: ChannelReduce) -> Result<Tensor> {
    let &[1, h, w, c] = gradient.shape() else {
        return Err(Error::shape("saliency_map", "gradient shape", "1 x H x W x C", format!("{:?}", gradient.shape())));
    };
    let data = gradient
        .data()
        .chunks_exact(c)
        .map(|px| match reduce {
            ChannelReduce::MaxAbs => px.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            ChannelReduce::MeanAbs => px.iter().map(|v| v.abs()).sum::<f64>() / c as f64,
        })
        .collect();
    Tensor::new(vec![h, w], data)
}

pub fn saliency_map(model: &Model, input: &Tensor, class_index: usize, settings: &SaliencySettings) -> Result<Tensor> {
    if input.rank() != 4 || input.batch() != 1 {
        return Err(Error::shape("saliency_map", "input shape", "1 x H x W x C", format!("{:?}", input.shape())));
    }
    let out = model.forward(input)?;
    let grad = model.score_gradient(&out.trace, class_index, settings.score_source)?;
    reduce_channels(&grad, settings.channel_reduce)
}

pub struct Saliency {
    descriptor: VisualizerDescriptor,
}

impl Saliency {
    pub fn new() -> Self {
        let schema = SettingsSchema::new(vec![
            SettingSpec::choice("score_source", "Differentiate", "logit", &["logit", "probability"]),
            SettingSpec::choice("channel_reduce", "Channel reduction", "max_abs", &["max_abs", "mean_abs"]),
            SettingSpec::int(CLASS_SELECTION, "Top classes", 3, Some(1), None),
        ])
        .expect("saliency schema is well formed");
        Saliency {
            descriptor: VisualizerDescriptor {
                name: "saliency".into(),
                description: "Absolute gradient of the class score with respect to each input pixel; \
                              bright pixels change the score most."
                    .into(),
                settings: schema,
            },
        }
    }
}

impl Default for Saliency {
    fn default() -> Self {
        Self::new()
    }
}

impl Visualizer for Saliency {
    fn descriptor(&self) -> &VisualizerDescriptor {
        &self.descriptor
    }

    fn compute(&self, model: &Model, input: &Tensor, class_index: usize, settings: &Settings) -> Result<RawMap> {
        let s = SaliencySettings::from_settings(settings)?;
        Ok(RawMap {
            values: saliency_map(model, input, class_index, &s)?,
            layout: GridLayout::Stretch,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_reductions() {
        let g = Tensor::new(vec![1, 1, 2, 3], vec![1.0, -4.0, 2.0, 0.0, 0.0, -3.0]).unwrap();
        assert_eq!(reduce_channels(&g, ChannelReduce::MaxAbs).unwrap().data(), &[4.0, 3.0]);
        assert_eq!(reduce_channels(&g, ChannelReduce::MeanAbs).unwrap().data(), &[7.0 / 3.0, 1.0]);
    }
}
