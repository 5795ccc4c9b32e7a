//! Fully convolutional content and style encoders and their feature banks.
//!
//! Both encoders have four stages without pooling. Stages 1-3 halve the
//! spatial size, stage 4 keeps it, giving `(H/2, W/2, 32)`, `(H/4, W/4, 64)`,
//! `(H/8, W/8, 128)` and `(H/8, W/8, 256)`. Each stage sums a main path
//! (two 3x3 convolutions with leaky-relu, the first one strided) with a
//! strided highway convolution: 2x2 for the content encoder, 1x1 for the style
//! encoder.
//!
//! The content bank additionally holds an `(H, W, 256)` tensor from a 1x1
//! convolution of the skeleton; the style bank holds the raw style image.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{leaky, Conv};
use crate::params::{Bound, ParamStore};
use crate::tensor::Real;

pub const STAGE_CHANNELS: [usize; 4] = [32, 64, 128, 256];
pub const STAGE_STRIDES: [usize; 4] = [2, 2, 2, 1];
/// Channels of the full-resolution content highway tensor.
pub const HIGHWAY_CHANNELS: usize = 256;
/// Sum of style bank stage channels.
pub const STYLE_BANK_CHANNELS: usize = 480;
/// Sum of content bank stage channels plus the highway tensor.
pub const CONTENT_BANK_CHANNELS: usize = 736;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    Content,
    Style,
}

impl EncoderKind {
    pub fn input_channels(self) -> usize {
        match self {
            EncoderKind::Content => 1,
            EncoderKind::Style => 3,
        }
    }

    fn highway_kernel(self) -> usize {
        match self {
            EncoderKind::Content => 2,
            EncoderKind::Style => 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncoderStage {
    pub conv_a: Conv,
    pub conv_b: Conv,
    pub highway: Conv,
}

impl EncoderStage {
    fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let a = self.conv_a.forward(tape, p, x)?;
        let a = leaky(tape, a);
        let b = self.conv_b.forward(tape, p, a)?;
        let b = leaky(tape, b);
        let h = self.highway.forward(tape, p, x)?;
        tape.add(b, h)
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub kind: EncoderKind,
    pub stages: Vec<EncoderStage>,
    /// 1x1 projection of the skeleton to the full-resolution highway tensor (content only).
    pub bank_highway: Option<Conv>,
}

/// Encoder outputs consumed by the rendering stages.
#[derive(Clone, Debug)]
pub struct FeatureBank {
    pub stages: [Var; 4],
    /// `(H, W, 256)` content highway tensor.
    pub highway: Option<Var>,
    /// Raw style image.
    pub raw_style: Option<Var>,
    pub height: usize,
    pub width: usize,
}

impl FeatureBank {
    /// Stage entries followed by the highway tensor when present.
    pub fn maps(&self) -> Vec<Var> {
        let mut v = self.stages.to_vec();
        v.extend(self.highway);
        v
    }
}

impl Encoder {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, name: &str, kind: EncoderKind) -> Self {
        let mut in_c = kind.input_channels();
        let hk = kind.highway_kernel();
        let stages = STAGE_CHANNELS
            .iter()
            .zip(STAGE_STRIDES)
            .enumerate()
            .map(|(i, (&out_c, stride))| {
                let prefix = format!("{name}.s{}", i + 1);
                let stage = EncoderStage {
                    conv_a: Conv::new(store, rng, &format!("{prefix}.conv_a"), in_c, out_c, (3, 3), stride, true),
                    conv_b: Conv::new(store, rng, &format!("{prefix}.conv_b"), out_c, out_c, (3, 3), 1, true),
                    highway: Conv::new(store, rng, &format!("{prefix}.highway"), in_c, out_c, (hk, hk), stride, false),
                };
                in_c = out_c;
                stage
            })
            .collect();
        let bank_highway = (kind == EncoderKind::Content)
            .then(|| Conv::pointwise(store, rng, &format!("{name}.bank_highway"), 1, HIGHWAY_CHANNELS, true));
        Self {
            kind,
            stages,
            bank_highway,
        }
    }

    /// Encodes an `(H, W, 1)` skeleton or `(H, W, 3)` style image.
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<FeatureBank> {
        let (h, w, c) = tape.value(image).expect_rank3("encoder input")?;
        if c != self.kind.input_channels() {
            return Err(Error::shape(format!(
                "{:?} encoder expects {} channels, got {c}",
                self.kind,
                self.kind.input_channels()
            )));
        }
        if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "encoder input {h}x{w} must have both sides divisible by 8"
            )));
        }
        let mut x = image;
        let mut outs = Vec::with_capacity(4);
        for stage in &self.stages {
            x = stage.forward(tape, p, x)?;
            outs.push(x);
        }
        let highway = match &self.bank_highway {
            Some(conv) => Some(conv.forward(tape, p, image)?),
            None => None,
        };
        let raw_style = (self.kind == EncoderKind::Style).then_some(image);
        Ok(FeatureBank {
            stages: [outs[0], outs[1], outs[2], outs[3]],
            highway,
            raw_style,
            height: h,
            width: w,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(kind: EncoderKind) -> (ParamStore<f32>, Encoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, &mut rng, "enc", kind);
        (store, enc)
    }

    #[test]
    fn rejects_indivisible_input() {
        let (store, enc) = setup(EncoderKind::Content);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::zeros(&[20, 96, 1]));
        assert!(matches!(enc.encode(&mut tape, &p, x), Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let (store, enc) = setup(EncoderKind::Style);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::zeros(&[32, 32, 1]));
        assert!(matches!(enc.encode(&mut tape, &p, x), Err(Error::Shape(_))));
    }

    #[test]
    fn single_pixel_change_reaches_first_stage() {
        let (store, enc) = setup(EncoderKind::Content);
        let run = |img: Tensor<f32>| {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape, false);
            let x = tape.constant(img);
            let bank = enc.encode(&mut tape, &p, x).unwrap();
            tape.value(bank.stages[0]).clone()
        };
        let base = Tensor::zeros(&[16, 16, 1]);
        let mut poked = base.clone();
        poked.set(9, 5, 0, 1.0);
        assert!(run(base).max_abs_diff(&run(poked)) > 0.0);
    }
}
