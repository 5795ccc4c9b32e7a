//! Direct, loop-based evaluations of the numeric kernels.
//!
//! These are deliberately slow and written independently of the fast paths
//! (no shared index helpers beyond [`Tensor`] accessors) so tests can compare
//! the two. Everything works in `f64`.

use crate::ops::Padding;
use crate::tensor::{ConvWeight, Tensor};

fn same_pad(n: usize, k: usize, stride: usize) -> (usize, isize) {
    let out = n.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(n);
    (out, (total / 2) as isize)
}

/// Quintuple-loop convolution with zero padding.
pub fn conv2d(x: &Tensor<f64>, w: &ConvWeight<f64>, stride: usize, padding: Padding) -> Tensor<f64> {
    let (h, wd, c) = x.hwc();
    let (o, kh, kw) = (w.out_channels(), w.kh(), w.kw());
    assert_eq!(c, w.in_channels(), "channel mismatch");
    let ((oh, pt), (ow, pl)) = match padding {
        Padding::Same => (same_pad(h, kh, stride), same_pad(wd, kw, stride)),
        Padding::Valid => (((h - kh) / stride + 1, 0), ((wd - kw) / stride + 1, 0)),
    };
    let mut out = Tensor::zeros(&[oh, ow, o]);
    for oy in 0..oh {
        for ox in 0..ow {
            for oc in 0..o {
                let mut acc = 0.0;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * stride + ky) as isize - pt;
                        let ix = (ox * stride + kx) as isize - pl;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                            continue;
                        }
                        for ic in 0..c {
                            acc += w.at(oc, ky, kx, ic) * x.at(iy as usize, ix as usize, ic);
                        }
                    }
                }
                out.set(oy, ox, oc, acc);
            }
        }
    }
    out
}

/// `exp(x_i) / sum exp(x_j)` without any stabilization.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = logits.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Bilinear interpolation with half-pixel centers, one output pixel at a time.
pub fn resize_bilinear(x: &Tensor<f64>, out_h: usize, out_w: usize) -> Tensor<f64> {
    let (h, w, c) = x.hwc();
    let source = |i: usize, n_in: usize, n_out: usize| {
        let s = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = s.floor() as usize;
        (lo, (lo + 1).min(n_in - 1), s - lo as f64)
    };
    Tensor::from_fn(out_h, out_w, c, |y, xx, ch| {
        let (y0, y1, fy) = source(y, h, out_h);
        let (x0, x1, fx) = source(xx, w, out_w);
        let top = x.at(y0, x0, ch) * (1.0 - fx) + x.at(y0, x1, ch) * fx;
        let bottom = x.at(y1, x0, ch) * (1.0 - fx) + x.at(y1, x1, ch) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Adaptive average pooling with bins `[floor(i n / m), ceil((i + 1) n / m))`.
pub fn avg_pool_to(x: &Tensor<f64>, out_h: usize, out_w: usize) -> Tensor<f64> {
    let (h, w, c) = x.hwc();
    let bin = |i: usize, n: usize, m: usize| (i * n / m, ((i + 1) * n).div_ceil(m));
    Tensor::from_fn(out_h, out_w, c, |oy, ox, ch| {
        let (y0, y1) = bin(oy, h, out_h);
        let (x0, x1) = bin(ox, w, out_w);
        let mut s = 0.0;
        for y in y0..y1 {
            for xx in x0..x1 {
                s += x.at(y, xx, ch);
            }
        }
        s / ((y1 - y0) * (x1 - x0)) as f64
    })
}

/// Modulated convolution evaluated per output element: the modulated sum
/// divided by the square root of the summed squared weight-style products.
pub fn modconv(content: &Tensor<f64>, style: &Tensor<f64>, w: &ConvWeight<f64>, eps: f64) -> Tensor<f64> {
    let (h, wd, c) = content.hwc();
    let (o, kh, kw) = (w.out_channels(), w.kh(), w.kw());
    let (_, pt) = same_pad(h, kh, 1);
    let (_, pl) = same_pad(wd, kw, 1);
    Tensor::from_fn(h, wd, o, |j, k, oc| {
        let mut u = 0.0;
        let mut var = 0.0;
        for ky in 0..kh {
            for kx in 0..kw {
                let y = j as isize + ky as isize - pt;
                let x = k as isize + kx as isize - pl;
                if y < 0 || x < 0 || y >= h as isize || x >= wd as isize {
                    continue;
                }
                for i in 0..c {
                    let wv = w.at(oc, ky, kx, i);
                    let sv = style.at(y as usize, x as usize, i);
                    u += wv * sv * content.at(y as usize, x as usize, i);
                    var += (wv * sv) * (wv * sv);
                }
            }
        }
        u / (var + eps).sqrt()
    })
}

/// Pixel-sampling attention at one coordinate: returns the output pixel and
/// the candidate weights.
pub fn sample_attention_at(
    query: &Tensor<f64>,
    keys: &Tensor<f64>,
    values: &Tensor<f64>,
    offsets: &[(isize, isize)],
    y: usize,
    x: usize,
) -> (Vec<f64>, Vec<f64>) {
    let (h, w, d) = query.hwc();
    let vc = values.c();
    let cands: Vec<(usize, usize)> = offsets
        .iter()
        .map(|&(dy, dx)| {
            (
                (y as isize + dy).clamp(0, h as isize - 1) as usize,
                (x as isize + dx).clamp(0, w as isize - 1) as usize,
            )
        })
        .collect();
    let logits: Vec<f64> = cands
        .iter()
        .map(|&(cy, cx)| (0..d).map(|i| query.at(y, x, i) * keys.at(cy, cx, i)).sum::<f64>() / (d as f64).sqrt())
        .collect();
    let wts = softmax(&logits);
    let out = (0..vc)
        .map(|ch| cands.iter().zip(&wts).map(|(&(cy, cx), wt)| wt * values.at(cy, cx, ch)).sum())
        .collect();
    (out, wts)
}

/// Multi-scale fusion at one query coordinate. `cell` is the number of query
/// pixels per key cell along each axis.
pub fn fuse_at(
    query: &Tensor<f64>,
    keys: &[Tensor<f64>; 4],
    values: &[Tensor<f64>; 4],
    cell: usize,
    j: usize,
    k: usize,
) -> (Vec<f64>, Vec<f64>) {
    let d = query.c();
    let (cy, cx) = (j / cell, k / cell);
    let logits: Vec<f64> = keys
        .iter()
        .map(|kt| (0..d).map(|i| query.at(j, k, i) * kt.at(cy, cx, i)).sum::<f64>() / (d as f64).sqrt())
        .collect();
    let wts = softmax(&logits);
    let out = (0..values[0].c())
        .map(|ch| values.iter().zip(&wts).map(|(v, wt)| wt * v.at(cy, cx, ch)).sum())
        .collect();
    (out, wts)
}
