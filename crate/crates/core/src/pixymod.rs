//! Pixel-wise style modulation.
//!
//! [`modconv`] modulates a content tensor elementwise by a style tensor of
//! the same shape, convolves, and divides every output element by the
//! standard deviation it would have if the content entries were i.i.d. with
//! unit variance:
//!
//! ```text
//! N = (W * (S . C)) / sqrt(W^2 * S^2 + eps)
//! ```
//!
//! `*` is a same-padded convolution, `.`, squares and the square root are
//! elementwise. [`PixyModStack`] stacks these layers and finishes with a plain
//! modulation and a 1x1 projection to RGB.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{leaky, Conv};
use crate::ops::{clamp_unit, resize_bilinear, Padding};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{ConvWeight, Real, Tensor};

/// Guard inside the demodulation square root.
pub const DEFAULT_EPS: f64 = 1e-8;
/// Output widths of the stacked modulated convolutions.
pub const DEFAULT_CHANNEL_PLAN: [usize; 3] = [128, 64, 64];

/// Modulated, demodulated convolution on the tape.
pub fn modconv<T: Real>(tape: &mut Tape<T>, content: Var, style: Var, weight: Var, eps: T) -> Result<Var> {
    if tape.dims(content) != tape.dims(style) {
        return Err(Error::shape(format!(
            "modconv: content {:?} vs style {:?}",
            tape.dims(content),
            tape.dims(style)
        )));
    }
    let modulated = tape.mul(style, content)?;
    let numerator = tape.conv2d(modulated, weight, 1, Padding::Same)?;
    let style_sq = tape.square(style);
    let weight_sq = tape.square(weight);
    let variance = tape.conv2d(style_sq, weight_sq, 1, Padding::Same)?;
    let variance = tape.add_scalar(variance, eps);
    let std = tape.sqrt(variance);
    tape.div(numerator, std)
}

/// [`modconv`] on plain tensors.
pub fn modconv_forward<T: Real>(content: &Tensor<T>, style: &Tensor<T>, weight: &ConvWeight<T>, eps: f64) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let c = tape.constant(content.clone());
    let s = tape.constant(style.clone());
    let w = tape.constant(weight.tensor().clone());
    let n = modconv(&mut tape, c, s, w, T::lit(eps))?;
    Ok(tape.value(n).clone())
}

#[derive(Clone, Debug)]
pub struct ModConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub eps: f64,
}

impl ModConvLayer {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        eps: f64,
    ) -> Self {
        let weight = store.add_conv_weight(format!("{name}.w"), (out_channels, 3, 3, in_channels), rng);
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[out_channels]));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            eps,
        }
    }

    /// Demodulated output plus bias, followed by leaky-relu.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, content: Var, style: Var) -> Result<Var> {
        let n = modconv(tape, content, style, p.var(self.weight), T::lit(self.eps))?;
        let n = tape.add_channel_bias(n, p.var(self.bias))?;
        Ok(leaky(tape, n))
    }
}

#[derive(Clone, Debug)]
pub struct PixyModStack {
    pub layers: Vec<ModConvLayer>,
    /// Final 1x1 projection to RGB after the last modulation (no activation).
    pub to_rgb: Conv,
    pub in_channels: usize,
}

impl PixyModStack {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        plan: &[usize],
        eps: f64,
    ) -> Self {
        let mut c = in_channels;
        let layers = plan
            .iter()
            .enumerate()
            .map(|(i, &out)| {
                let layer = ModConvLayer::new(store, rng, &format!("{name}.mod{}", i + 1), c, out, eps);
                c = out;
                layer
            })
            .collect();
        let to_rgb = Conv::pointwise(store, rng, &format!("{name}.to_rgb"), c, 3, true);
        Self {
            layers,
            to_rgb,
            in_channels,
        }
    }

    /// Channel count of each modulation's style tensor, in order: one per
    /// ModConv layer and one for the final modulation.
    pub fn style_channels(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.layers.iter().map(|l| l.in_channels).collect();
        v.push(self.to_rgb.in_channels);
        v
    }

    /// Renders an RGB image from `content`, asking `style_for(tape, i, input)`
    /// for the style tensor of modulation `i` whose input is `input`.
    pub fn render_with<T: Real, F>(&self, tape: &mut Tape<T>, p: &Bound, content: Var, mut style_for: F) -> Result<Var>
    where
        F: FnMut(&mut Tape<T>, usize, Var) -> Result<Var>,
    {
        let mut x = content;
        let n_mod = self.layers.len() + 1;
        for i in 0..n_mod {
            let s = style_for(tape, i, x)?;
            if tape.dims(s) != tape.dims(x) {
                return Err(Error::config(format!(
                    "style tensor for modulation {i} has shape {:?}, its input is {:?}",
                    tape.dims(s),
                    tape.dims(x)
                )));
            }
            x = match self.layers.get(i) {
                Some(layer) => layer.forward(tape, p, x, s)?,
                None => {
                    let m = tape.mul(s, x)?;
                    self.to_rgb.forward(tape, p, m)?
                }
            };
        }
        Ok(x)
    }

    /// Renders with precomputed style tensors, one per modulation.
    pub fn render<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, content: Var, styles: &[Var]) -> Result<Var> {
        let needed = self.layers.len() + 1;
        if styles.len() != needed {
            return Err(Error::config(format!(
                "pixel-wise modulation needs {needed} style tensors, got {}",
                styles.len()
            )));
        }
        self.render_with(tape, p, content, |_, i, _| Ok(styles[i]))
    }
}

/// Final image: the full-resolution stage plus the up-sampled half-resolution stage (unclamped).
pub fn fuse_stages<T: Real>(tape: &mut Tape<T>, full: Var, half: Var) -> Result<Var> {
    let (h, w, c) = tape.value(full).expect_rank3("full-resolution stage")?;
    let (hh, hw, hc) = tape.value(half).expect_rank3("half-resolution stage")?;
    if c != 3 || hc != 3 || hh * 2 != h || hw * 2 != w {
        return Err(Error::shape(format!(
            "cannot fuse stage images {:?} and {:?}",
            tape.dims(full),
            tape.dims(half)
        )));
    }
    let up = tape.resize(half, h, w)?;
    tape.add(full, up)
}

/// Clamped-to-[0, 1] fusion of two stage images.
pub fn fuse_stage_images<T: Real>(full: &Tensor<T>, half: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = full.expect_rank3("full-resolution stage")?;
    let (hh, hw, hc) = half.expect_rank3("half-resolution stage")?;
    if c != 3 || hc != 3 || hh * 2 != h || hw * 2 != w {
        return Err(Error::shape(format!(
            "cannot fuse stage images {:?} and {:?}",
            full.dims(),
            half.dims()
        )));
    }
    let up = resize_bilinear(half, h, w)?;
    Ok(clamp_unit(&full.zip_map(&up, |a, b| a + b)?))
}
