//! PNG decoding and conversion to model input tensors.

use image::{ColorType, DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    Grayscale,
    Rgb,
}

impl ChannelMode {
    pub fn count(self) -> usize {
        match self {
            ChannelMode::Grayscale => 1,
            ChannelMode::Rgb => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    /// Source index `floor(i * in / out)`.
    Nearest,
    /// Half-pixel-centre sampling with edge clamping.
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    /// `x / 255`
    Unit,
    /// `x / 255 - 0.5`
    Centered,
}

impl Scaling {
    pub fn apply(self, byte_value: f64) -> f64 {
        match self {
            Scaling::Unit => byte_value / 255.0,
            Scaling::Centered => byte_value / 255.0 - 0.5,
        }
    }

    /// Middle of the scaled value range.
    pub fn midpoint(self) -> f64 {
        match self {
            Scaling::Unit => 0.5,
            Scaling::Centered => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub height: usize,
    pub width: usize,
    pub channels: ChannelMode,
    pub resize: ResizeMode,
    pub scaling: Scaling,
}

impl PreprocessSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Validation(format!(
                "preprocess target {}x{} must be positive",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels.count()]
    }
}

/// A decoded image as `f64` planes in byte units (0..=255), HWC order.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

pub fn decode_png(bytes: &[u8]) -> Result<DynamicImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::Decode(e.to_string()))?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::Validation("image has a zero dimension".into()));
    }
    Ok(img)
}

/// Decodes to a one- or three-channel raster; alpha is dropped.
pub fn decode_raster(bytes: &[u8]) -> Result<Raster> {
    let img = decode_png(bytes)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(
        img.color(),
        ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16
    );
    let (channels, data) = if gray {
        (1, img.to_luma8().into_raw())
    } else {
        (3, img.to_rgb8().into_raw())
    };
    Ok(Raster {
        height: h,
        width: w,
        channels,
        data: data.into_iter().map(f64::from).collect(),
    })
}

fn convert_channels(src: &Raster, mode: ChannelMode) -> Raster {
    let data = match (src.channels, mode) {
        (1, ChannelMode::Grayscale) | (3, ChannelMode::Rgb) => src.data.clone(),
        (3, ChannelMode::Grayscale) => src
            .data
            .chunks_exact(3)
            .map(|px| LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2])
            .collect(),
        (1, ChannelMode::Rgb) => src.data.iter().flat_map(|&v| [v, v, v]).collect(),
        (c, _) => unreachable!("raster with {c} channels"),
    };
    Raster {
        height: src.height,
        width: src.width,
        channels: mode.count(),
        data,
    }
}

/// Resamples a raster to `height x width`.
pub fn resize(src: &Raster, height: usize, width: usize, mode: ResizeMode) -> Raster {
    if src.height == height && src.width == width {
        return src.clone();
    }
    let c = src.channels;
    let at = |y: usize, x: usize, ch: usize| src.data[(y * src.width + x) * c + ch];
    let mut data = Vec::with_capacity(height * width * c);
    match mode {
        ResizeMode::Nearest => {
            for i in 0..height {
                let sy = i * src.height / height;
                for j in 0..width {
                    let sx = j * src.width / width;
                    for ch in 0..c {
                        data.push(at(sy, sx, ch));
                    }
                }
            }
        }
        ResizeMode::Bilinear => {
            let taps = |out: usize, extent_out: usize, extent_in: usize| {
                let scale = extent_in as f64 / extent_out as f64;
                let s = ((out as f64 + 0.5) * scale - 0.5).clamp(0.0, (extent_in - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(extent_in - 1);
                (lo, hi, s - lo as f64)
            };
            for i in 0..height {
                let (y0, y1, fy) = taps(i, height, src.height);
                for j in 0..width {
                    let (x0, x1, fx) = taps(j, width, src.width);
                    for ch in 0..c {
                        let top = at(y0, x0, ch) * (1.0 - fx) + at(y0, x1, ch) * fx;
                        let bottom = at(y1, x0, ch) * (1.0 - fx) + at(y1, x1, ch) * fx;
                        data.push(top * (1.0 - fy) + bottom * fy);
                    }
                }
            }
        }
    }
    Raster {
        height,
        width,
        channels: c,
        data,
    }
}

/// PNG bytes to a `1 x H x W x C` model input.
pub fn preprocess_image(png: &[u8], spec: &PreprocessSpec) -> Result<Tensor> {
    spec.validate()?;
    let raster = decode_raster(png)?;
    let converted = convert_channels(&raster, spec.channels);
    let resized = resize(&converted, spec.height, spec.width, spec.resize);
    let data = resized.data.into_iter().map(|v| spec.scaling.apply(v)).collect();
    Tensor::new(vec![1, spec.height, spec.width, spec.channels.count()], data)
}
