//! RGB raster images: decoding, square crops and Lanczos resampling.
//!
//! Pixels are kept as normalised `f32` in `[0, 1]`, row-major, three
//! interleaved channels. Quantisation to 8 bits happens only in
//! [`encode_png`].

use std::io::Cursor;

use image::{DynamicImage, ImageFormat, RgbImage};
use thiserror::Error;

pub const CHANNELS: usize = 3;

/// Lanczos window half-width in source pixels (before down-scaling dilation).
pub const LANCZOS_SUPPORT: f64 = 3.0;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("unsupported image format")]
    UnsupportedFormat,
    #[error("corrupt image file: {0}")]
    CorruptFile(String),
    #[error("crop {rect:?} exceeds image extent {width}x{height}")]
    OutOfBounds { rect: CropRect, width: usize, height: usize },
    #[error("invalid resize target {width}x{height}")]
    InvalidTarget { width: usize, height: usize },
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("png encoding failed: {0}")]
    Encode(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl RasterImage {
    /// Wraps an interleaved RGB buffer, checking length and value range.
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::InvalidRaster(format!("empty extent {width}x{height}")));
        }
        if pixels.len() != width * height * CHANNELS {
            return Err(RasterError::InvalidRaster(format!(
                "buffer holds {} values, expected {}",
                pixels.len(),
                width * height * CHANNELS
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(RasterError::InvalidRaster(format!("pixel value {bad} outside [0,1]")));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self, RasterError> {
        let pixels = rgb.iter().copied().cycle().take(width * height * CHANNELS).collect();
        Self::new(width, height, pixels)
    }

    /// Builds an image from a per-pixel function returning RGB triples.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self, RasterError> {
        let mut pixels = Vec::with_capacity(width * height * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Planar (C, H, W) copy of the pixel data.
    pub fn to_planar(&self) -> Vec<f32> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; plane * CHANNELS];
        for (i, px) in self.pixels.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                out[c * plane + i] = px[c];
            }
        }
        out
    }
}

/// A square crop: top-left corner `(x, y)` and edge length `side`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub side: usize,
}

impl CropRect {
    pub fn new(x: usize, y: usize, side: usize) -> Self {
        Self { x, y, side }
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.side > 0 && self.x + self.side <= width && self.y + self.side <= height
    }
}

/// Decodes a PNG or TIFF byte stream into normalised RGB.
///
/// Grayscale sources are replicated across the three channels; alpha is
/// dropped.
pub fn decode_image(bytes: &[u8]) -> Result<RasterImage, RasterError> {
    if bytes.is_empty() {
        return Err(RasterError::CorruptFile("empty stream".into()));
    }
    let format = image::guess_format(bytes).map_err(|_| RasterError::UnsupportedFormat)?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Tiff) {
        return Err(RasterError::UnsupportedFormat);
    }
    let decoded = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| RasterError::CorruptFile(e.to_string()))?;
    let rgb = decoded.to_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let pixels = rgb.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    RasterImage::new(w, h, pixels)
}

/// Encodes as an 8-bit RGB PNG (values rounded to the nearest level).
pub fn encode_png(img: &RasterImage) -> Result<Vec<u8>, RasterError> {
    let bytes: Vec<u8> = img.pixels.iter().map(|v| (v * 255.0).round() as u8).collect();
    let buf = RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .ok_or_else(|| RasterError::Encode("buffer size mismatch".into()))?;
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageRgb8(buf)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| RasterError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

/// Copies the square region `rect` out of `img`.
pub fn crop(img: &RasterImage, rect: CropRect) -> Result<RasterImage, RasterError> {
    if !rect.fits(img.width, img.height) {
        return Err(RasterError::OutOfBounds { rect, width: img.width, height: img.height });
    }
    let row = rect.side * CHANNELS;
    let mut pixels = Vec::with_capacity(row * rect.side);
    for y in rect.y..rect.y + rect.side {
        let start = (y * img.width + rect.x) * CHANNELS;
        pixels.extend_from_slice(&img.pixels[start..start + row]);
    }
    Ok(RasterImage { width: rect.side, height: rect.side, pixels })
}

/// Normalised sinc-windowed sinc, `a = 3`. Exactly zero at non-zero integers.
pub fn lanczos_kernel(x: f64) -> f64 {
    let ax = x.abs();
    if ax >= LANCZOS_SUPPORT {
        return 0.0;
    }
    if ax == 0.0 {
        return 1.0;
    }
    if ax.fract() == 0.0 {
        return 0.0;
    }
    let px = std::f64::consts::PI * x;
    LANCZOS_SUPPORT * px.sin() * (px / LANCZOS_SUPPORT).sin() / (px * px)
}

/// Per-output-sample taps along one axis: first source index and weights
/// (already normalised). Indices outside the source are clamped to the edge.
struct AxisWeights {
    taps: Vec<(isize, Vec<f64>)>,
}

impl AxisWeights {
    fn new(src: usize, dst: usize) -> Self {
        let ratio = src as f64 / dst as f64;
        let scale = ratio.max(1.0);
        let support = LANCZOS_SUPPORT * scale;
        let taps = (0..dst)
            .map(|i| {
                let center = (i as f64 + 0.5) * ratio;
                let lo = (center - support).floor() as isize;
                let hi = (center + support).ceil() as isize;
                let mut weights: Vec<f64> = (lo..=hi)
                    .map(|j| lanczos_kernel((j as f64 + 0.5 - center) / scale))
                    .collect();
                let sum: f64 = weights.iter().sum();
                weights.iter_mut().for_each(|w| *w /= sum);
                (lo, weights)
            })
            .collect();
        Self { taps }
    }
}

fn clamp_index(j: isize, n: usize) -> usize {
    j.clamp(0, n as isize - 1) as usize
}

/// Separable Lanczos-3 resize with per-pixel weight renormalisation and edge
/// clamping. Output values are clamped to `[0, 1]`.
pub fn lanczos_resize(
    img: &RasterImage,
    target_w: usize,
    target_h: usize,
) -> Result<RasterImage, RasterError> {
    if target_w == 0 || target_h == 0 {
        return Err(RasterError::InvalidTarget { width: target_w, height: target_h });
    }
    let (sw, sh) = (img.width, img.height);

    // horizontal pass: sh rows x target_w columns, kept in f64
    let hw = AxisWeights::new(sw, target_w);
    let mut tmp = vec![0.0f64; sh * target_w * CHANNELS];
    for y in 0..sh {
        let src_row = &img.pixels[y * sw * CHANNELS..(y + 1) * sw * CHANNELS];
        for (ox, (lo, weights)) in hw.taps.iter().enumerate() {
            let mut acc = [0.0f64; CHANNELS];
            for (k, w) in weights.iter().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                let sx = clamp_index(lo + k as isize, sw);
                for c in 0..CHANNELS {
                    acc[c] += w * src_row[sx * CHANNELS + c] as f64;
                }
            }
            let dst = (y * target_w + ox) * CHANNELS;
            tmp[dst..dst + CHANNELS].copy_from_slice(&acc);
        }
    }

    let vw = AxisWeights::new(sh, target_h);
    let mut pixels = vec![0.0f32; target_w * target_h * CHANNELS];
    let mut exact = vec![0.0f64; target_w * CHANNELS];
    for (oy, (lo, weights)) in vw.taps.iter().enumerate() {
        exact.iter_mut().for_each(|v| *v = 0.0);
        for (k, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let sy = clamp_index(lo + k as isize, sh);
            let src_row = &tmp[sy * target_w * CHANNELS..(sy + 1) * target_w * CHANNELS];
            for (o, s) in exact.iter_mut().zip(src_row) {
                *o += w * s;
            }
        }
        let out_row = &mut pixels[oy * target_w * CHANNELS..(oy + 1) * target_w * CHANNELS];
        for (o, v) in out_row.iter_mut().zip(&exact) {
            *o = v.clamp(0.0, 1.0) as f32;
        }
    }
    Ok(RasterImage { width: target_w, height: target_h, pixels })
}
