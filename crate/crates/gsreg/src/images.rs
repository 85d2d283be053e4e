//! PNG export of rendered depth and color.

use std::path::Path;

use gsreg_core::render::{ColorImage, DepthMap};
use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

/// Depth is stored in millimeters and saturates at 65.535 scene units; empty
/// pixels are 0.
pub fn save_depth_png(depth: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(depth.width, depth.height, |x, y| {
        Luma([(depth.get(x, y) * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16])
    });
    buf.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Inverse of [`save_depth_png`] up to millimeter quantization.
pub fn load_depth_png(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    let img = img.into_luma16();
    let (width, height) = img.dimensions();
    Ok(DepthMap { data: img.pixels().map(|p| p.0[0] as f64 / 1000.0).collect(), width, height })
}

pub fn save_color_png(color: &ColorImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(color.width, color.height, |x, y| {
        Rgb(color.get(x, y).map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    buf.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}
