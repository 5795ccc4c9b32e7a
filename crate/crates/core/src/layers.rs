//! Convolution layer with optional per-channel bias.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::ops::Padding;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Slope of every leaky-relu in the generator and discriminator.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: Padding,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        (kh, kw): (usize, usize),
        stride: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add_conv_weight(format!("{name}.w"), (out_channels, kh, kw, in_channels), rng);
        let bias = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[out_channels])));
        Self {
            weight,
            bias,
            stride,
            padding: Padding::Same,
            in_channels,
            out_channels,
        }
    }

    /// Pointwise (1x1) projection.
    pub fn pointwise<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        bias: bool,
    ) -> Self {
        Self::new(store, rng, name, in_channels, out_channels, (1, 1), 1, bias)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.conv2d(x, p.var(self.weight), self.stride, self.padding)?;
        match self.bias {
            Some(b) => tape.add_channel_bias(y, p.var(b)),
            None => Ok(y),
        }
    }
}

pub fn leaky<T: Real>(tape: &mut Tape<T>, x: Var) -> Var {
    tape.leaky_relu(x, T::lit(LEAKY_SLOPE))
}
