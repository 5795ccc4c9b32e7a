//! Source image shaping and the patch shuffle that turns a crop into a style image.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::resize_bilinear;
use crate::tensor::Tensor;

pub const DEFAULT_PATCH: usize = 16;

/// A crop window taken from a source resized to the target height.
#[derive(Clone, Debug)]
pub struct ResizedCrop {
    pub image: Tensor<f32>,
    /// Size of the source after the aspect-preserving resize (before padding).
    pub resized: (usize, usize),
    /// Left edge of the crop window.
    pub x0: usize,
}

/// Resizes to `target_h` rows keeping the aspect ratio, replicates the last
/// column if the result is narrower than `crop_w`, and cuts a random
/// `crop_w`-wide window.
pub fn resize_keep_aspect_then_crop<R: Rng + ?Sized>(
    img: &Tensor<f32>,
    target_h: usize,
    crop_w: usize,
    rng: &mut R,
) -> Result<ResizedCrop> {
    let (h, w, c) = img.expect_rank3("source image")?;
    if h == 0 || w == 0 || target_h == 0 || crop_w == 0 {
        return Err(Error::domain("resize and crop need non-empty sizes"));
    }
    let new_w = ((w as f64 * target_h as f64 / h as f64).round() as usize).max(1);
    let resized = resize_bilinear(img, target_h, new_w)?;
    let x0 = if new_w > crop_w { rng.random_range(0..=new_w - crop_w) } else { 0 };
    let image = Tensor::from_fn(target_h, crop_w, c, |y, x, ch| resized.at(y, (x0 + x).min(new_w - 1), ch));
    Ok(ResizedCrop {
        image,
        resized: (target_h, new_w),
        x0,
    })
}

/// How patches are rotated and swapped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShufflePolicy {
    /// Rotate every patch by a uniform multiple of 90 degrees.
    pub rotate: bool,
    /// Chance that a patch not yet paired tries to swap with a free neighbour.
    pub swap_prob: f64,
}

impl Default for ShufflePolicy {
    fn default() -> Self {
        Self {
            rotate: true,
            swap_prob: 0.5,
        }
    }
}

impl ShufflePolicy {
    /// No rotation and no swaps: the output equals the input.
    pub fn identity() -> Self {
        Self {
            rotate: false,
            swap_prob: 0.0,
        }
    }
}

/// What one shuffle did, patch by patch in raster order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShuffleRecord {
    pub rows: usize,
    pub cols: usize,
    pub patch: usize,
    /// Counter-clockwise quarter turns applied to each source patch.
    pub rotations: Vec<u8>,
    /// Swap partner of each patch, if any. Always symmetric.
    pub partners: Vec<Option<usize>>,
}

impl ShuffleRecord {
    /// Index of the source patch that ends up at output slot `i`.
    pub fn source_of(&self, i: usize) -> usize {
        self.partners[i].unwrap_or(i)
    }
}

/// Rotates a square `p x p` block counter-clockwise by `turns` quarter turns.
/// Returns the source coordinate feeding output coordinate `(y, x)`.
pub fn rotated_source(y: usize, x: usize, p: usize, turns: u8) -> (usize, usize) {
    match turns % 4 {
        0 => (y, x),
        1 => (x, p - 1 - y),
        2 => (p - 1 - y, p - 1 - x),
        _ => (p - 1 - x, y),
    }
}

fn neighbours(i: usize, rows: usize, cols: usize) -> impl Iterator<Item = usize> {
    let (r, c) = ((i / cols) as isize, (i % cols) as isize);
    (-1..=1isize)
        .flat_map(move |dr| (-1..=1isize).map(move |dc| (r + dr, c + dc)))
        .filter(move |&(rr, cc)| (rr, cc) != (r, c) && rr >= 0 && cc >= 0 && rr < rows as isize && cc < cols as isize)
        .map(move |(rr, cc)| rr as usize * cols + cc as usize)
}

/// Cuts the image into `patch x patch` blocks, rotates each one and swaps
/// random pairs of 8-neighbours. Every patch takes part in at most one swap.
pub fn single_crop<R: Rng + ?Sized>(
    gt: &Tensor<f32>,
    patch: usize,
    policy: ShufflePolicy,
    rng: &mut R,
) -> Result<(Tensor<f32>, ShuffleRecord)> {
    let (h, w, c) = gt.expect_rank3("ground truth")?;
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::shape(format!(
            "{h}x{w} image does not divide into {patch}x{patch} patches"
        )));
    }
    let (rows, cols) = (h / patch, w / patch);
    let n = rows * cols;
    let rotations: Vec<u8> = (0..n)
        .map(|_| if policy.rotate { rng.random_range(0..4u8) } else { 0 })
        .collect();

    let mut partners: Vec<Option<usize>> = vec![None; n];
    if policy.swap_prob > 0.0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        for i in order {
            if partners[i].is_some() || !rng.random_bool(policy.swap_prob.min(1.0)) {
                continue;
            }
            let free: Vec<usize> = neighbours(i, rows, cols).filter(|&j| partners[j].is_none()).collect();
            if let Some(&j) = free.get(rng.random_range(0..free.len().max(1))) {
                partners[i] = Some(j);
                partners[j] = Some(i);
            }
        }
    }

    let record = ShuffleRecord {
        rows,
        cols,
        patch,
        rotations,
        partners,
    };
    let out = Tensor::from_fn(h, w, c, |y, x, ch| {
        let slot = (y / patch) * cols + x / patch;
        let src = record.source_of(slot);
        let (py, px) = rotated_source(y % patch, x % patch, patch, record.rotations[src]);
        gt.at((src / cols) * patch + py, (src % cols) * patch + px, ch)
    });
    Ok((out, record))
}
