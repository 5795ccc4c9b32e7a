//! Style tensors for pixel-wise modulation.
//!
//! Three ways of turning the style bank into a per-layer style tensor:
//!
//! * [`StyleMode::Attention`]: multi-scale fusion. Keys and values come from
//!   the `(H/8, W/8, 480)` concatenated style bank, pooled to a 4-level
//!   pyramid (the map itself plus `4 x 4W/H`, `2 x 2W/H`, `1 x W/H` pools
//!   up-sampled back). Every query pixel attends over the four levels at its
//!   cell and takes the softmax-weighted mix of their value vectors.
//! * [`StyleMode::Concat`]: the style bank resampled to the working size,
//!   concatenated and projected by a 1x1 convolution.
//! * [`StyleMode::Global`]: the projection of the `H/8` concatenation,
//!   globally average pooled, i.e. a spatially uniform style vector.
//!
//! A 1x1 projection of a channel concatenation equals the sum of per-entry
//! projections, and 1x1 projections commute with resampling, so the concat
//! and query projections are evaluated per bank entry at native resolution
//! and then resampled and summed.

use rand::Rng;

use crate::autodiff::{CompositeOp, Tape, Var};
use crate::encoders::{FeatureBank, STAGE_CHANNELS};
use crate::error::{Error, Result};
use crate::layers::Conv;
use crate::ops::softmax_in_place;
use crate::params::{Bound, ParamStore};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_D_F: usize = 64;
pub const PYRAMID_LEVELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StyleMode {
    Global,
    Concat,
    Attention,
}

/// Style bank stages resampled to `(H/8, W/8)` and concatenated (480 channels).
pub fn build_style_cat<T: Real>(tape: &mut Tape<T>, style: &FeatureBank) -> Result<Var> {
    let (h8, w8) = (style.height / 8, style.width / 8);
    let maps = style
        .stages
        .iter()
        .map(|&v| tape.resize(v, h8, w8))
        .collect::<Result<Vec<_>>>()?;
    tape.concat(&maps)
}

/// Pooled sizes of pyramid levels 1-3 for an `(h8, w8)` base map. Widths that
/// are not integral are rounded up.
pub fn pyramid_sizes(h8: usize, w8: usize) -> Result<[(usize, usize); 3]> {
    if h8 < 4 {
        return Err(Error::config(format!(
            "style pyramid needs at least 4 rows at 1/8 scale, got {h8}"
        )));
    }
    let level = |rows: usize| (rows, (rows * w8).div_ceil(h8));
    Ok([level(4), level(2), level(1)])
}

/// Level 0 is `base`; levels 1-3 are pooled and bilinearly up-sampled back.
pub fn build_pyramid<T: Real>(tape: &mut Tape<T>, base: Var) -> Result<[Var; PYRAMID_LEVELS]> {
    let (h8, w8, _) = tape.value(base).expect_rank3("pyramid base")?;
    let sizes = pyramid_sizes(h8, w8)?;
    let mut levels = [base; PYRAMID_LEVELS];
    for (slot, (ph, pw)) in levels.iter_mut().skip(1).zip(sizes) {
        let pooled = tape.avg_pool(base, ph, pw)?;
        *slot = tape.resize(pooled, h8, w8)?;
    }
    Ok(levels)
}

fn cell_factor(qh: usize, qw: usize, h8: usize, w8: usize) -> Result<usize> {
    if h8 == 0 || !qh.is_multiple_of(h8) || !qw.is_multiple_of(w8) || qh / h8 != qw / w8 {
        return Err(Error::shape(format!(
            "query {qh}x{qw} is not an integer multiple of the {h8}x{w8} style cells"
        )));
    }
    Ok(qh / h8)
}

/// Fuses pyramid values for every query pixel. Returns the `(H, W, I)` style
/// tensor and the `(H, W, 4)` attention weights.
pub fn fuse_tensors<T: Real>(
    query: &Tensor<T>,
    keys: [&Tensor<T>; PYRAMID_LEVELS],
    values: [&Tensor<T>; PYRAMID_LEVELS],
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (qh, qw, d) = query.expect_rank3("fusion query")?;
    let (h8, w8, kd) = keys[0].expect_rank3("fusion keys")?;
    let (_, _, vc) = values[0].expect_rank3("fusion values")?;
    if kd != d {
        return Err(Error::shape(format!("query width {d} vs key width {kd}")));
    }
    let levels = keys.iter().map(|t| (t, d)).chain(values.iter().map(|t| (t, vc)));
    for (t, width) in levels {
        if t.dims() != [h8, w8, width] {
            return Err(Error::shape(format!(
                "pyramid level {:?} does not match {h8}x{w8}x{width}",
                t.dims()
            )));
        }
    }
    let f = cell_factor(qh, qw, h8, w8)?;
    let scale = T::one() / T::lit(d as f64).sqrt();
    let mut out = vec![T::zero(); qh * qw * vc];
    let mut weights = vec![T::zero(); qh * qw * PYRAMID_LEVELS];
    for j in 0..qh {
        for k in 0..qw {
            let p = j * qw + k;
            let cell = (j / f) * w8 + k / f;
            let q = &query.data()[p * d..(p + 1) * d];
            let wts = &mut weights[p * PYRAMID_LEVELS..(p + 1) * PYRAMID_LEVELS];
            for (wt, key) in wts.iter_mut().zip(&keys) {
                let kv = &key.data()[cell * d..(cell + 1) * d];
                *wt = q.iter().zip(kv).map(|(&a, &b)| a * b).sum::<T>() * scale;
            }
            softmax_in_place(wts);
            let o = &mut out[p * vc..(p + 1) * vc];
            for (&wt, val) in wts.iter().zip(&values) {
                for (ov, &vv) in o.iter_mut().zip(&val.data()[cell * vc..(cell + 1) * vc]) {
                    *ov += wt * vv;
                }
            }
        }
    }
    Ok((
        Tensor::new(&[qh, qw, vc], out)?,
        Tensor::new(&[qh, qw, PYRAMID_LEVELS], weights)?,
    ))
}

/// The `(H, W, 4)` per-level attention weights of a fusion.
pub fn attention_map<T: Real>(query: &Tensor<T>, keys: [&Tensor<T>; PYRAMID_LEVELS]) -> Result<Tensor<T>> {
    let (h8, w8, _) = keys[0].expect_rank3("fusion keys")?;
    let dummy = Tensor::zeros(&[h8, w8, 1]);
    let (_, weights) = fuse_tensors(query, keys, [&dummy, &dummy, &dummy, &dummy])?;
    Ok(weights)
}

struct FuseOp<T> {
    factor: usize,
    weights: Tensor<T>,
}

impl<T: Real> CompositeOp<T> for FuseOp<T> {
    fn name(&self) -> &'static str {
        "multi-scale style fusion"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        dy: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let q = inputs[0];
        let keys = &inputs[1..1 + PYRAMID_LEVELS];
        let values = &inputs[1 + PYRAMID_LEVELS..];
        let (qh, qw, d) = q.hwc();
        let (_, w8, vc) = values[0].hwc();
        let f = self.factor;
        let scale = T::one() / T::lit(d as f64).sqrt();
        let mut dq = vec![T::zero(); q.len()];
        let mut dk: Vec<Vec<T>> = keys.iter().map(|t| vec![T::zero(); t.len()]).collect();
        let mut dv: Vec<Vec<T>> = values.iter().map(|t| vec![T::zero(); t.len()]).collect();
        let mut dlogit = [T::zero(); PYRAMID_LEVELS];
        for j in 0..qh {
            for k in 0..qw {
                let p = j * qw + k;
                let cell = (j / f) * w8 + k / f;
                let g = &dy.data()[p * vc..(p + 1) * vc];
                let wts = &self.weights.data()[p * PYRAMID_LEVELS..(p + 1) * PYRAMID_LEVELS];
                let mut dot = T::zero();
                for (i, dl) in dlogit.iter_mut().enumerate() {
                    let vv = &values[i].data()[cell * vc..(cell + 1) * vc];
                    *dl = g.iter().zip(vv).map(|(&a, &b)| a * b).sum();
                    dot += wts[i] * *dl;
                }
                for (dl, &wt) in dlogit.iter_mut().zip(wts) {
                    *dl = wt * (*dl - dot) * scale;
                }
                let qp = &q.data()[p * d..(p + 1) * d];
                for i in 0..PYRAMID_LEVELS {
                    if needs[0] {
                        let kv = &keys[i].data()[cell * d..(cell + 1) * d];
                        for (a, &b) in dq[p * d..(p + 1) * d].iter_mut().zip(kv) {
                            *a += dlogit[i] * b;
                        }
                    }
                    if needs[1 + i] {
                        for (a, &b) in dk[i][cell * d..(cell + 1) * d].iter_mut().zip(qp) {
                            *a += dlogit[i] * b;
                        }
                    }
                    if needs[1 + PYRAMID_LEVELS + i] {
                        for (a, &b) in dv[i][cell * vc..(cell + 1) * vc].iter_mut().zip(g) {
                            *a += wts[i] * b;
                        }
                    }
                }
            }
        }
        let mut out = Vec::with_capacity(1 + 2 * PYRAMID_LEVELS);
        out.push(needs[0].then(|| Tensor::new(q.dims(), dq).expect("dims")));
        for (i, g) in dk.into_iter().enumerate() {
            out.push(needs[1 + i].then(|| Tensor::new(keys[i].dims(), g).expect("dims")));
        }
        for (i, g) in dv.into_iter().enumerate() {
            out.push(needs[1 + PYRAMID_LEVELS + i].then(|| Tensor::new(values[i].dims(), g).expect("dims")));
        }
        out
    }
}

/// Records the fusion on the tape; also returns the attention weights.
pub fn fuse<T: Real>(
    tape: &mut Tape<T>,
    query: Var,
    keys: [Var; PYRAMID_LEVELS],
    values: [Var; PYRAMID_LEVELS],
) -> Result<(Var, Tensor<T>)> {
    let (out, weights) = fuse_tensors(
        tape.value(query),
        keys.map(|v| tape.value(v)),
        values.map(|v| tape.value(v)),
    )?;
    let (qh, qw, _) = tape.value(query).hwc();
    let (h8, w8, _) = tape.value(keys[0]).hwc();
    let op = FuseOp {
        factor: cell_factor(qh, qw, h8, w8)?,
        weights: weights.clone(),
    };
    let mut inputs = vec![query];
    inputs.extend(keys);
    inputs.extend(values);
    Ok((tape.composite(inputs, out, Box::new(op)), weights))
}

/// Per-forward inputs shared by all style builders of a renderer.
#[derive(Clone, Debug)]
pub struct StyleContext {
    /// Style bank stages.
    pub style_stages: [Var; 4],
    /// `(H/8, W/8, 480)` concatenation of the style bank.
    pub style_cat: Var,
    /// Content bank entries (stages then highway tensor).
    pub content_maps: Vec<Var>,
}

impl StyleContext {
    pub fn new<T: Real>(tape: &mut Tape<T>, content: &FeatureBank, style: &FeatureBank) -> Result<Self> {
        Ok(Self {
            style_stages: style.stages,
            style_cat: build_style_cat(tape, style)?,
            content_maps: content.maps(),
        })
    }
}

/// Projection of the concatenation of several maps, evaluated per map.
#[derive(Clone, Debug)]
pub struct SplitProjection {
    pub parts: Vec<Conv>,
}

impl SplitProjection {
    fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_widths: &[usize],
        out: usize,
        bias: bool,
    ) -> Self {
        let total: usize = in_widths.iter().sum();
        let parts = in_widths
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut conv = Conv::pointwise(store, rng, &format!("{name}.part{i}"), c, out, bias && i == 0);
                // Rescale so the fan-in matches the full concatenation.
                let w = store.get_mut(conv.weight);
                let s = T::lit((c as f64 / total as f64).sqrt());
                w.data_mut().iter_mut().for_each(|v| *v *= s);
                conv.in_channels = c;
                conv
            })
            .collect();
        Self { parts }
    }

    fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, maps: &[Var], h: usize, w: usize) -> Result<Var> {
        if maps.len() != self.parts.len() {
            return Err(Error::config(format!(
                "projection expects {} maps, got {}",
                self.parts.len(),
                maps.len()
            )));
        }
        let mut acc: Option<Var> = None;
        for (conv, &m) in self.parts.iter().zip(maps) {
            let y = conv.forward(tape, p, m)?;
            let y = tape.resize(y, h, w)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, y)?,
                None => y,
            });
        }
        acc.ok_or_else(|| Error::config("projection of zero maps"))
    }
}

/// Where a fusion module takes its queries from.
#[derive(Clone, Debug)]
pub enum QuerySource {
    /// Every content bank entry, resampled and concatenated, then projected.
    ContentBank(SplitProjection),
    /// The input of the modulation being styled (previous layer's output).
    Previous(Conv),
}

/// One fusion module, owned by a single modulation operation.
#[derive(Clone, Debug)]
pub struct AttnMuSF {
    pub query: QuerySource,
    pub key: Conv,
    pub value: Conv,
    pub d_f: usize,
    pub out_channels: usize,
}

#[derive(Clone, Debug)]
pub enum LayerStyle {
    Global(Conv),
    Concat(SplitProjection),
    Attention(AttnMuSF),
}

/// Style tensor plus, for the attention mode, its `(H, W, 4)` weights.
pub struct StyleOutput<T> {
    pub style: Var,
    pub attention: Option<Tensor<T>>,
}

impl LayerStyle {
    /// `query_width` is `None` when queries come from the content bank,
    /// otherwise the channel count of the previous layer's output.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        mode: StyleMode,
        out_channels: usize,
        query_width: Option<usize>,
        content_widths: &[usize],
        d_f: usize,
    ) -> Self {
        let style_total: usize = STAGE_CHANNELS.iter().sum();
        match mode {
            StyleMode::Global => LayerStyle::Global(Conv::pointwise(
                store,
                rng,
                &format!("{name}.proj"),
                style_total,
                out_channels,
                true,
            )),
            StyleMode::Concat => LayerStyle::Concat(SplitProjection::new(
                store,
                rng,
                &format!("{name}.proj"),
                &STAGE_CHANNELS,
                out_channels,
                true,
            )),
            StyleMode::Attention => {
                let query = match query_width {
                    None => QuerySource::ContentBank(SplitProjection::new(
                        store,
                        rng,
                        &format!("{name}.query"),
                        content_widths,
                        d_f,
                        false,
                    )),
                    Some(c) => QuerySource::Previous(Conv::pointwise(store, rng, &format!("{name}.query"), c, d_f, false)),
                };
                LayerStyle::Attention(AttnMuSF {
                    query,
                    key: Conv::pointwise(store, rng, &format!("{name}.key"), style_total, d_f, false),
                    value: Conv::pointwise(store, rng, &format!("{name}.value"), style_total, out_channels, true),
                    d_f,
                    out_channels,
                })
            }
        }
    }

    /// Style tensor at `(h, w)` for a modulation whose input is `layer_input`.
    pub fn build<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        ctx: &StyleContext,
        (h, w): (usize, usize),
        layer_input: Var,
    ) -> Result<StyleOutput<T>> {
        match self {
            LayerStyle::Global(conv) => {
                let y = conv.forward(tape, p, ctx.style_cat)?;
                let v = tape.avg_pool(y, 1, 1)?;
                let style = tape.resize(v, h, w)?;
                Ok(StyleOutput { style, attention: None })
            }
            LayerStyle::Concat(proj) => {
                let style = proj.forward(tape, p, &ctx.style_stages, h, w)?;
                Ok(StyleOutput { style, attention: None })
            }
            LayerStyle::Attention(m) => {
                let q = match &m.query {
                    QuerySource::ContentBank(proj) => proj.forward(tape, p, &ctx.content_maps, h, w)?,
                    QuerySource::Previous(conv) => conv.forward(tape, p, layer_input)?,
                };
                let k0 = m.key.forward(tape, p, ctx.style_cat)?;
                let v0 = m.value.forward(tape, p, ctx.style_cat)?;
                let keys = build_pyramid(tape, k0)?;
                let values = build_pyramid(tape, v0)?;
                let (style, weights) = fuse(tape, q, keys, values)?;
                Ok(StyleOutput {
                    style,
                    attention: Some(weights),
                })
            }
        }
    }
}
