//! PNG encoding of canvas rasters.

use std::io::Cursor;

use image::{ImageFormat, RgbImage};
use thiserror::Error;

use crate::domain::{Canvas, ObjectRegistry, Rgb};

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("png encoding failed: {0}")]
    Encode(String),
    #[error("png decoding failed: {0}")]
    Decode(String),
}

pub fn encode_png(canvas: &Canvas) -> Result<Vec<u8>, RasterError> {
    let raw: Vec<u8> = canvas.pixels.iter().flatten().copied().collect();
    let img = RgbImage::from_raw(canvas.width, canvas.height, raw)
        .ok_or_else(|| RasterError::Encode("pixel buffer does not match dimensions".into()))?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).map_err(|e| RasterError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

/// Decodes any PNG into an RGB canvas carrying `registry`.
pub fn decode_png(bytes: &[u8], registry: ObjectRegistry) -> Result<Canvas, RasterError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| RasterError::Decode(e.to_string()))?
        .to_rgb8();
    let (width, height) = img.dimensions();
    let pixels: Vec<Rgb> = img.pixels().map(|p| p.0).collect();
    Ok(Canvas { width, height, pixels, registry })
}
