use rand::Rng;

use crate::data::crop::{resize_keep_aspect_then_crop, single_crop, ShufflePolicy, ShuffleRecord, DEFAULT_PATCH};
use crate::data::mask::{binarize_adaptive, skeletonize, DEFAULT_OFFSET, DEFAULT_WINDOW};
use crate::error::Result;
use crate::tensor::Tensor;

/// Skeleton, shuffled style image and the crop both came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    /// `(H, W, 1)`, 1 on the skeleton.
    pub content: Tensor<f32>,
    /// `(H, W, 3)`.
    pub style: Tensor<f32>,
    /// `(H, W, 3)`.
    pub ground_truth: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletConfig {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub window: usize,
    pub offset: f64,
    pub policy: ShufflePolicy,
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self {
            height: 128,
            width: 384,
            patch: DEFAULT_PATCH,
            window: DEFAULT_WINDOW,
            offset: DEFAULT_OFFSET,
            policy: ShufflePolicy::default(),
        }
    }
}

impl TripletConfig {
    pub fn with_size(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            ..Self::default()
        }
    }
}

/// Crops a ground truth from `source`, shuffles it into a style image and
/// skeletonizes it into the content image.
pub fn make_triplet<R: Rng + ?Sized>(source: &Tensor<f32>, cfg: &TripletConfig, rng: &mut R) -> Result<(Triplet, ShuffleRecord)> {
    let gt = resize_keep_aspect_then_crop(source, cfg.height, cfg.width, rng)?.image;
    let gt = if gt.c() == 3 {
        gt
    } else {
        Tensor::from_fn(gt.h(), gt.w(), 3, |y, x, _| gt.at(y, x, 0))
    };
    let (style, record) = single_crop(&gt, cfg.patch, cfg.policy, rng)?;
    let content = skeletonize(&binarize_adaptive(&gt, cfg.window, cfg.offset)).to_tensor();
    Ok((
        Triplet {
            content,
            style,
            ground_truth: gt,
        },
        record,
    ))
}
