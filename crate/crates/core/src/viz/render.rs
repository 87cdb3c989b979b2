//! Grayscale heatmap rendering to PNG.

use std::io::Cursor;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::io::preprocess::decode_png;
use crate::tensor::Tensor;

/// How cells of a raw map are laid over output pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridLayout {
    /// Nearest-neighbour stretch: pixel `y` reads cell `floor(y * rows / height)`.
    Stretch,
    /// Cell `i` owns the `stride`-sized block starting at `i * stride`; the
    /// last cell also owns any remainder up to the image edge.
    Anchored { stride: usize },
}

impl GridLayout {
    fn cell(self, pixel: usize, pixels: usize, cells: usize) -> usize {
        match self {
            GridLayout::Stretch => pixel * cells / pixels,
            GridLayout::Anchored { stride } => (pixel / stride.max(1)).min(cells - 1),
        }
    }
}

/// Min-max normalizes to `[0, 1]` and quantizes to 8 bits, rounding half up.
/// A constant map becomes all zeros.
pub fn gray_levels(raw: &Tensor) -> Result<Vec<u8>> {
    if !raw.all_finite() {
        return Err(Error::Validation("heatmap values must be finite".into()));
    }
    let (min, max) = raw
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = max - min;
    Ok(raw
        .data()
        .iter()
        .map(|&v| {
            let n = if span > 0.0 { (v - min) / span } else { 0.0 };
            (n * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
        })
        .collect())
}

fn encode_png(width: usize, height: usize, color: ExtendedColorType, pixels: &[u8]) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    PngEncoder::new(&mut buf)
        .write_image(pixels, width as u32, height as u32, color)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(buf.into_inner())
}

/// Renders a 2-D raw map as a `target = (height, width)` grayscale PNG, or,
/// with an overlay image, as RGB `alpha * heat + (1 - alpha) * image`.
pub fn render_heatmap(
    raw: &Tensor,
    target: (usize, usize),
    layout: GridLayout,
    overlay: Option<&[u8]>,
    alpha: f64,
) -> Result<Vec<u8>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Validation(format!("alpha must be in [0, 1], got {alpha}")));
    }
    let &[rows, cols] = raw.shape() else {
        return Err(Error::shape("render_heatmap", "raw map rank", 2, raw.rank()));
    };
    let (height, width) = target;
    if height == 0 || width == 0 {
        return Err(Error::Validation("render target must be non-empty".into()));
    }
    let levels = gray_levels(raw)?;
    let heat: Vec<u8> = (0..height)
        .flat_map(|y| {
            let r = layout.cell(y, height, rows);
            let levels = &levels;
            (0..width).map(move |x| levels[r * cols + layout.cell(x, width, cols)])
        })
        .collect();

    let Some(overlay) = overlay else {
        return encode_png(width, height, ExtendedColorType::L8, &heat);
    };
    let base = decode_png(overlay)?.to_rgb8();
    let (bw, bh) = (base.width() as usize, base.height() as usize);
    let mut out = Vec::with_capacity(height * width * 3);
    for y in 0..height {
        let sy = y * bh / height;
        for x in 0..width {
            let sx = x * bw / width;
            let px = base.get_pixel(sx as u32, sy as u32);
            let h = heat[y * width + x] as f64;
            for c in 0..3 {
                let v = alpha * h + (1.0 - alpha) * px[c] as f64;
                out.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
            }
        }
    }
    encode_png(width, height, ExtendedColorType::Rgb8, &out)
}
