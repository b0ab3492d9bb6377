//! 8-bit grey raster files (PNG, PGM).

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use image::GrayImage;
use mlgface::raster::Raster;

pub fn load_grey(path: &Path) -> Result<Raster> {
    let img = image::open(path)
        .with_context(|| format!("reading image {}", path.display()))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(f64::from).collect();
    Ok(Raster::from_vec(w as usize, h as usize, data)?)
}

pub fn save_grey(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        bail!("{} pixels for a {width}x{height} image", pixels.len());
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let img = GrayImage::from_raw(width as u32, height as u32, pixels.to_vec())
        .context("pixel buffer does not match the image size")?;
    img.save(path)
        .with_context(|| format!("writing image {}", path.display()))
}
