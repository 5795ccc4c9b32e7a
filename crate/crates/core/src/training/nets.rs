//! Discriminator and the frozen feature extractor behind the perceptual loss.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{leaky, Conv};
use crate::ops::Padding;
use crate::params::{read_checkpoint, Bound, ParamStore};
use crate::tensor::{ConvWeight, Real};

/// Output widths and strides of the discriminator's 3x3 convolutions.
pub const DISCRIMINATOR_PLAN: [(usize, usize); 4] = [(32, 2), (64, 2), (128, 2), (1, 1)];

/// Patch discriminator producing an `(H/8, W/8, 1)` map of logits.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub convs: Vec<Conv>,
}

impl Discriminator {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R) -> Self {
        let mut c = 3;
        let convs = DISCRIMINATOR_PLAN
            .iter()
            .enumerate()
            .map(|(i, &(out, stride))| {
                let conv = Conv::new(store, rng, &format!("disc.conv{}", i + 1), c, out, (3, 3), stride, true);
                c = out;
                conv
            })
            .collect();
        Self { convs }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, image: Var) -> Result<Var> {
        let mut x = image;
        for (i, conv) in self.convs.iter().enumerate() {
            x = conv.forward(tape, p, x)?;
            if i + 1 < self.convs.len() {
                x = leaky(tape, x);
            }
        }
        Ok(x)
    }
}

/// Output widths and strides of the default perceptual feature stages.
pub const PERCEPTUAL_PLAN: [(usize, usize); 5] = [(16, 1), (32, 2), (64, 2), (64, 2), (64, 2)];

/// Fixed convolutional feature extractor. Each stage is a bias-free
/// convolution followed by leaky-relu; the weights never train.
#[derive(Clone, Debug)]
pub struct PerceptualNet<T: Real = f32> {
    store: ParamStore<T>,
    stages: Vec<Conv>,
}

impl<T: Real> PerceptualNet<T> {
    /// Five 3x3 stages with seeded fan-in-scaled weights.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut c = 3;
        let stages = PERCEPTUAL_PLAN
            .iter()
            .enumerate()
            .map(|(i, &(out, stride))| {
                let conv = Conv::new(&mut store, &mut rng, &format!("perceptual.stage{}", i + 1), c, out, (3, 3), stride, false);
                c = out;
                conv
            })
            .collect();
        Self { store, stages }
    }

    /// A network from explicit `(weight, stride)` stages.
    pub fn from_stages(stages: Vec<(ConvWeight<T>, usize)>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::config("perceptual network needs at least one stage"));
        }
        let mut store = ParamStore::new();
        let mut convs = Vec::with_capacity(stages.len());
        let mut c = stages[0].0.in_channels();
        for (i, (w, stride)) in stages.into_iter().enumerate() {
            if w.in_channels() != c || stride == 0 {
                return Err(Error::config(format!("perceptual stage {} does not chain", i + 1)));
            }
            let o = w.out_channels();
            let id = store.add(format!("perceptual.stage{}.w", i + 1), w.into_tensor());
            convs.push(Conv {
                weight: id,
                bias: None,
                stride,
                padding: Padding::Same,
                in_channels: c,
                out_channels: o,
            });
            c = o;
        }
        Ok(Self { store, stages: convs })
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Stage outputs for `image`, weights entered as constants.
    pub fn features(&self, tape: &mut Tape<T>, image: Var) -> Result<Vec<Var>> {
        let p = self.store.bind(tape, false);
        let mut x = image;
        let mut out = Vec::with_capacity(self.stages.len());
        for conv in &self.stages {
            x = conv.forward(tape, &p, x)?;
            x = leaky(tape, x);
            out.push(x);
        }
        Ok(out)
    }

    pub fn cast<U: Real>(&self) -> PerceptualNet<U> {
        PerceptualNet {
            store: self.store.cast(),
            stages: self.stages.clone(),
        }
    }
}

impl PerceptualNet<f32> {
    /// Default architecture with weights read from a checkpoint file.
    pub fn load(path: &Path) -> Result<Self> {
        let mut net = Self::new(0);
        net.store.load_named(read_checkpoint(path)?)?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn discriminator_map_is_one_eighth() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        let d = Discriminator::new(&mut store, &mut rng);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::zeros(&[32, 96, 3]));
        let y = d.forward(&mut tape, &p, x).unwrap();
        assert_eq!(tape.dims(y), &[4, 12, 1]);
    }

    #[test]
    fn perceptual_features_are_deterministic() {
        let a = PerceptualNet::<f32>::new(5);
        let b = PerceptualNet::<f32>::new(5);
        let img = Tensor::from_fn(32, 32, 3, |y, x, c| ((y * 3 + x * 5 + c) % 7) as f32 / 7.0);
        let run = |net: &PerceptualNet<f32>| {
            let mut tape = Tape::new();
            let x = tape.constant(img.clone());
            let f = net.features(&mut tape, x).unwrap();
            f.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>()
        };
        let (fa, fb) = (run(&a), run(&b));
        assert_eq!(fa.len(), 5);
        assert_eq!(fa, fb);
        assert_eq!(fa[4].dims(), &[2, 2, 64]);
    }
}
