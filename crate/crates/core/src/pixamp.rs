//! Attention-based pixel sampling: the first rendering stage.
//!
//! Every coordinate of the half-resolution output looks at `k x k` style
//! pixels spaced `m` apart around the same coordinate of the half-resolution
//! style image, scores them by scaled dot products between its content query
//! and their style keys, and returns the softmax-weighted mix of their RGB
//! values. Each output pixel is therefore a convex combination of sampled
//! style pixels.

use rand::Rng;

use crate::autodiff::{CompositeOp, Tape, Var};
use crate::encoders::{FeatureBank, CONTENT_BANK_CHANNELS, STYLE_BANK_CHANNELS};
use crate::error::{Error, Result};
use crate::layers::Conv;
use crate::ops::softmax_in_place;
use crate::params::{Bound, ParamStore};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_M: usize = 4;
pub const DEFAULT_D_S: usize = 64;

/// `k x k` sample offsets with spacing `m`, centered on the query coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplingGrid {
    k: usize,
    m: usize,
}

impl SamplingGrid {
    pub fn new(k: usize, m: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::domain("sampling grid needs k >= 1"));
        }
        if k > 1 && m == 0 {
            return Err(Error::domain("sampling grid needs m >= 1 when k > 1"));
        }
        Ok(Self { k, m })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn candidates(&self) -> usize {
        self.k * self.k
    }

    /// Pixels covered along each axis.
    pub fn span(&self) -> usize {
        (self.k - 1) * self.m + 1
    }

    /// Offsets along one axis. When `(k - 1) * m` is odd the extra pixel
    /// falls on the positive side.
    pub fn axis_offsets(&self) -> Vec<isize> {
        let start = -(((self.k - 1) * self.m / 2) as isize);
        (0..self.k).map(|i| start + (i * self.m) as isize).collect()
    }

    /// All `k^2` `(dy, dx)` offsets in row-major order.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let axis = self.axis_offsets();
        axis.iter()
            .flat_map(|&dy| axis.iter().map(move |&dx| (dy, dx)))
            .collect()
    }
}

impl Default for SamplingGrid {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            m: DEFAULT_M,
        }
    }
}

/// Half-resolution inputs of the sampling stage.
#[derive(Clone, Copy, Debug)]
pub struct SamInputs {
    /// `(H/2, W/2, 736)` concatenated content bank.
    pub content: Var,
    /// `(H/2, W/2, 480)` concatenated style bank.
    pub style: Var,
    /// `(H/2, W/2, 3)` down-sampled style image.
    pub style_image: Var,
}

/// Resamples every bank entry to `(H/2, W/2)` and concatenates each bank.
pub fn build_sam_inputs<T: Real>(tape: &mut Tape<T>, content: &FeatureBank, style: &FeatureBank) -> Result<SamInputs> {
    if (content.height, content.width) != (style.height, style.width) {
        return Err(Error::shape(format!(
            "content bank is {}x{}, style bank is {}x{}",
            content.height, content.width, style.height, style.width
        )));
    }
    let raw = style
        .raw_style
        .ok_or_else(|| Error::shape("style bank has no raw style image"))?;
    let (h2, w2) = (content.height / 2, content.width / 2);
    let resample_all = |tape: &mut Tape<T>, maps: &[Var]| -> Result<Vec<Var>> {
        maps.iter().map(|&v| tape.resize(v, h2, w2)).collect()
    };
    let content_maps = resample_all(tape, &content.maps())?;
    let style_maps = resample_all(tape, &style.stages)?;
    let content_cat = tape.concat(&content_maps)?;
    let style_cat = tape.concat(&style_maps)?;
    let style_image = tape.resize(raw, h2, w2)?;
    Ok(SamInputs {
        content: content_cat,
        style: style_cat,
        style_image,
    })
}

#[derive(Clone, Debug)]
pub struct AttnPixamp {
    pub query: Conv,
    pub key: Conv,
    pub grid: SamplingGrid,
    pub d_s: usize,
}

impl AttnPixamp {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        grid: SamplingGrid,
        d_s: usize,
    ) -> Self {
        Self {
            query: Conv::pointwise(store, rng, &format!("{name}.query"), CONTENT_BANK_CHANNELS, d_s, false),
            key: Conv::pointwise(store, rng, &format!("{name}.key"), STYLE_BANK_CHANNELS, d_s, false),
            grid,
            d_s,
        }
    }

    /// Renders the `(H/2, W/2, 3)` stage-1 image.
    pub fn render<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, inputs: &SamInputs) -> Result<Var> {
        let q = self.query.forward(tape, p, inputs.content)?;
        let k = self.key.forward(tape, p, inputs.style)?;
        sample_attention(tape, q, k, inputs.style_image, self.grid)
    }
}

/// Candidate positions for `(y, x)`, clamped to the image.
fn candidate_positions(y: usize, x: usize, h: usize, w: usize, offsets: &[(isize, isize)], out: &mut Vec<usize>) {
    out.clear();
    for &(dy, dx) in offsets {
        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
        out.push(yy * w + xx);
    }
}

/// Forward pass on plain tensors: returns the sampled image and the
/// `(h, w, k^2)` attention weights.
pub fn sample_attention_tensors<T: Real>(
    query: &Tensor<T>,
    keys: &Tensor<T>,
    values: &Tensor<T>,
    grid: SamplingGrid,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (h, w, d) = query.expect_rank3("pixel sampling query")?;
    let (kh, kw, kd) = keys.expect_rank3("pixel sampling keys")?;
    let (vh, vw, vc) = values.expect_rank3("pixel sampling values")?;
    if (kh, kw, kd) != (h, w, d) || (vh, vw) != (h, w) {
        return Err(Error::shape(format!(
            "pixel sampling: query {:?}, keys {:?}, values {:?}",
            query.dims(),
            keys.dims(),
            values.dims()
        )));
    }
    let offsets = grid.offsets();
    let n = offsets.len();
    let scale = T::one() / T::lit(d as f64).sqrt();
    let (qd, kd, vd) = (query.data(), keys.data(), values.data());
    let mut out = vec![T::zero(); h * w * vc];
    let mut weights = vec![T::zero(); h * w * n];
    let mut pos = Vec::with_capacity(n);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            candidate_positions(y, x, h, w, &offsets, &mut pos);
            let q = &qd[p * d..(p + 1) * d];
            let wts = &mut weights[p * n..(p + 1) * n];
            for (wt, &cp) in wts.iter_mut().zip(&pos) {
                let kv = &kd[cp * d..(cp + 1) * d];
                *wt = q.iter().zip(kv).map(|(&a, &b)| a * b).sum::<T>() * scale;
            }
            softmax_in_place(wts);
            let o = &mut out[p * vc..(p + 1) * vc];
            for (&wt, &cp) in wts.iter().zip(&pos) {
                for (ov, &vv) in o.iter_mut().zip(&vd[cp * vc..(cp + 1) * vc]) {
                    *ov += wt * vv;
                }
            }
        }
    }
    Ok((Tensor::new(&[h, w, vc], out)?, Tensor::new(&[h, w, n], weights)?))
}

struct SampleAttentionOp<T> {
    offsets: Vec<(isize, isize)>,
    weights: Tensor<T>,
}

impl<T: Real> CompositeOp<T> for SampleAttentionOp<T> {
    fn name(&self) -> &'static str {
        "pixel-sampling attention"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        dy: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let (q, k, v) = (inputs[0], inputs[1], inputs[2]);
        let (h, w, d) = q.hwc();
        let vc = v.c();
        let n = self.offsets.len();
        let scale = T::one() / T::lit(d as f64).sqrt();
        let mut dq = vec![T::zero(); q.len()];
        let mut dk = vec![T::zero(); k.len()];
        let mut dv = vec![T::zero(); v.len()];
        let mut pos = Vec::with_capacity(n);
        let mut dlogit = vec![T::zero(); n];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                candidate_positions(y, x, h, w, &self.offsets, &mut pos);
                let g = &dy.data()[p * vc..(p + 1) * vc];
                let wts = &self.weights.data()[p * n..(p + 1) * n];
                let mut dot = T::zero();
                for ((dl, &cp), &wt) in dlogit.iter_mut().zip(&pos).zip(wts) {
                    let dw: T = g.iter().zip(&v.data()[cp * vc..(cp + 1) * vc]).map(|(&a, &b)| a * b).sum();
                    *dl = dw;
                    dot += wt * dw;
                }
                for (dl, &wt) in dlogit.iter_mut().zip(wts) {
                    *dl = wt * (*dl - dot) * scale;
                }
                let qp = &q.data()[p * d..(p + 1) * d];
                for ((&dl, &cp), &wt) in dlogit.iter().zip(&pos).zip(wts) {
                    if needs[0] {
                        let kv = &k.data()[cp * d..(cp + 1) * d];
                        for (a, &b) in dq[p * d..(p + 1) * d].iter_mut().zip(kv) {
                            *a += dl * b;
                        }
                    }
                    if needs[1] {
                        for (a, &b) in dk[cp * d..(cp + 1) * d].iter_mut().zip(qp) {
                            *a += dl * b;
                        }
                    }
                    if needs[2] {
                        for (a, &b) in dv[cp * vc..(cp + 1) * vc].iter_mut().zip(g) {
                            *a += wt * b;
                        }
                    }
                }
            }
        }
        let wrap = |need: bool, data: Vec<T>, like: &Tensor<T>| {
            need.then(|| Tensor::new(like.dims(), data).expect("same dims"))
        };
        vec![wrap(needs[0], dq, q), wrap(needs[1], dk, k), wrap(needs[2], dv, v)]
    }
}

/// Records pixel-sampling attention on the tape.
pub fn sample_attention<T: Real>(tape: &mut Tape<T>, query: Var, keys: Var, values: Var, grid: SamplingGrid) -> Result<Var> {
    let (out, weights) = sample_attention_tensors(tape.value(query), tape.value(keys), tape.value(values), grid)?;
    let op = SampleAttentionOp {
        offsets: grid.offsets(),
        weights,
    };
    Ok(tape.composite(vec![query, keys, values], out, Box::new(op)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_spans_17_with_25_candidates() {
        let g = SamplingGrid::default();
        assert_eq!(g.candidates(), 25);
        assert_eq!(g.span(), 17);
        assert_eq!(g.axis_offsets(), vec![-8, -4, 0, 4, 8]);
    }

    #[test]
    fn zero_k_is_domain_error() {
        assert!(matches!(SamplingGrid::new(0, 4), Err(Error::Domain(_))));
    }

    #[test]
    fn odd_extent_leans_positive() {
        let g = SamplingGrid::new(2, 1).unwrap();
        assert_eq!(g.offsets(), vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn offsets_symmetric_when_extent_even() {
        let g = SamplingGrid::new(3, 2).unwrap();
        let axis = g.axis_offsets();
        assert_eq!(axis, vec![-2, 0, 2]);
        assert_eq!(g.span(), 5);
    }
}
