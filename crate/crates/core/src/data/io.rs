//! PNG reading and writing for images in `[0, 1]`.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb, Rgba};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn image_error(path: &Path, source: image::ImageError) -> Error {
    match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        other => Error::Image {
            path: path.to_path_buf(),
            source: other,
        },
    }
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn from_byte(b: u8) -> f32 {
    b as f32 / 255.0
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| image_error(path, e))
}

/// Loads any PNG as an `(H, W, 3)` RGB tensor. Alpha is dropped.
pub fn load_png(path: &Path) -> Result<Tensor<f32>> {
    let img = open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(from_byte).collect();
    Tensor::new(&[h as usize, w as usize, 3], data)
}

/// Loads a PNG as an `(H, W, 1)` luminance tensor.
pub fn load_gray_png(path: &Path) -> Result<Tensor<f32>> {
    let img = open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(from_byte).collect();
    Tensor::new(&[h as usize, w as usize, 1], data)
}

/// Writes a 1-, 3- or 4-channel tensor as 8-bit gray, RGB or RGBA.
pub fn save_png(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let (h, w, c) = img.expect_rank3("image")?;
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_byte(v)).collect();
    let (w, h) = (w as u32, h as u32);
    let bad = || Error::shape(format!("image buffer does not match {:?}", img.dims()));
    let result = match c {
        1 => ImageBuffer::<Luma<u8>, _>::from_raw(w, h, bytes).ok_or_else(bad)?.save(path),
        3 => ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, bytes).ok_or_else(bad)?.save(path),
        4 => ImageBuffer::<Rgba<u8>, _>::from_raw(w, h, bytes).ok_or_else(bad)?.save(path),
        _ => {
            return Err(Error::shape(format!(
                "cannot write a {c}-channel image as PNG"
            )))
        }
    };
    result.map_err(|e| image_error(path, e))
}

/// Writes `(H, W, 4)` attention weights as RGBA, one level per channel.
pub fn save_attention_map(path: &Path, weights: &Tensor<f32>) -> Result<()> {
    if weights.rank() != 3 || weights.c() != 4 {
        return Err(Error::shape(format!(
            "attention map must be (H, W, 4), got {:?}",
            weights.dims()
        )));
    }
    save_png(path, weights)
}
