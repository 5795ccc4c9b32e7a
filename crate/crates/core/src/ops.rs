//! Numeric kernels over [`Tensor`]: convolution, softmax, bilinear resampling,
//! adaptive average pooling, channel concatenation and elementwise plumbing.
//!
//! The `*_backward` helpers are the adjoints used by the autodiff tape. Each
//! forward kernel has a naive counterpart in [`crate::reference`].

use crate::error::{Error, Result};
use crate::tensor::{ConvWeight, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    /// Zero padding so the output is `ceil(h / stride) x ceil(w / stride)`.
    Same,
    Valid,
}

/// Resolved convolution geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub out_c: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new(
        (in_h, in_w, in_c): (usize, usize, usize),
        (out_c, kh, kw, w_in): (usize, usize, usize, usize),
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::domain("conv stride must be positive"));
        }
        if w_in != in_c {
            return Err(Error::shape(format!(
                "conv2d: input has {in_c} channels, kernel expects {w_in}"
            )));
        }
        if kh == 0 || kw == 0 {
            return Err(Error::shape("conv2d: empty kernel"));
        }
        let (out_h, pad_top) = axis_geom(in_h, kh, stride, padding)?;
        let (out_w, pad_left) = axis_geom(in_w, kw, stride, padding)?;
        Ok(Self {
            in_h,
            in_w,
            in_c,
            kh,
            kw,
            out_c,
            stride,
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.in_c
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }
}

fn axis_geom(n: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = n.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(n);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if n < k {
                return Err(Error::shape(format!("conv2d: kernel {k} does not fit input {n}")));
            }
            Ok(((n - k) / stride + 1, 0))
        }
    }
}

/// `c = a * b (+ beta * c)` where `a` is logically `m x k` and `b` is `k x n`.
/// A transposed flag means the operand is stored row-major in the other
/// orientation.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_trans: bool,
    b: &[T],
    b_trans: bool,
    c: &mut [T],
    beta: T,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths checked above; strides describe the stated layouts.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let k = g.patch_len();
    let mut cols = vec![T::zero(); g.out_h * g.out_w * k];
    let row_len = g.kw * g.in_c;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let base = (oy * g.out_w + ox) * k;
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                let dst_row = base + ky * row_len;
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.in_w as isize {
                        continue;
                    }
                    let src = (iy as usize * g.in_w + ix as usize) * g.in_c;
                    let dst = dst_row + kx * g.in_c;
                    cols[dst..dst + g.in_c].copy_from_slice(&x[src..src + g.in_c]);
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let k = g.patch_len();
    let mut x = vec![T::zero(); g.in_h * g.in_w * g.in_c];
    let row_len = g.kw * g.in_c;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let base = (oy * g.out_w + ox) * k;
            for ky in 0..g.kh {
                let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                for kx in 0..g.kw {
                    let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.in_w as isize {
                        continue;
                    }
                    let dst = (iy as usize * g.in_w + ix as usize) * g.in_c;
                    let src = base + ky * row_len + kx * g.in_c;
                    for (d, &s) in x[dst..dst + g.in_c].iter_mut().zip(&cols[src..src + g.in_c]) {
                        *d += s;
                    }
                }
            }
        }
    }
    x
}

pub(crate) fn conv2d_geom<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<ConvGeom> {
    let xd = x.expect_rank3("conv2d input")?;
    if w.rank() != 4 {
        return Err(Error::shape(format!("conv2d weight must be rank 4, got {:?}", w.dims())));
    }
    let d = w.dims();
    ConvGeom::new(xd, (d[0], d[1], d[2], d[3]), stride, padding)
}

/// 2-D convolution (cross-correlation) via im2col and a blocked matrix product.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    w: &ConvWeight<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    conv2d_raw(x, w.tensor(), stride, padding)
}

pub(crate) fn conv2d_raw<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = conv2d_geom(x, w, stride, padding)?;
    let p = g.out_h * g.out_w;
    let k = g.patch_len();
    let mut out = vec![T::zero(); p * g.out_c];
    if g.is_pointwise() {
        gemm(p, k, g.out_c, x.data(), false, w.data(), true, &mut out, T::zero());
    } else {
        let cols = im2col(x.data(), &g);
        gemm(p, k, g.out_c, &cols, false, w.data(), true, &mut out, T::zero());
    }
    Tensor::new(&[g.out_h, g.out_w, g.out_c], out)
}

/// Adjoint of [`conv2d`]: returns `(d_input, d_weight)` for the requested sides.
pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &ConvGeom,
    dy: &Tensor<T>,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let p = g.out_h * g.out_w;
    let k = g.patch_len();
    let pointwise = g.is_pointwise();
    let dw = need_dw.then(|| {
        let mut dw = vec![T::zero(); g.out_c * k];
        if pointwise {
            gemm(g.out_c, p, k, dy.data(), true, x.data(), false, &mut dw, T::zero());
        } else {
            let cols = im2col(x.data(), g);
            gemm(g.out_c, p, k, dy.data(), true, &cols, false, &mut dw, T::zero());
        }
        Tensor::new(w.dims(), dw).expect("weight dims")
    });
    let dx = need_dx.then(|| {
        let mut dcols = vec![T::zero(); p * k];
        gemm(p, g.out_c, k, dy.data(), false, w.data(), false, &mut dcols, T::zero());
        let dx = if pointwise { dcols } else { col2im(&dcols, g) };
        Tensor::new(&[g.in_h, g.in_w, g.in_c], dx).expect("input dims")
    });
    (dx, dw)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Real>(logits: &[T]) -> Result<Vec<T>> {
    if logits.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("softmax of non-finite logits"));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place<T: Real>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x = *x / total;
    }
}

/// Softmax over the channel axis at every pixel.
pub fn softmax_channels<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, c) = x.expect_rank3("softmax_channels")?;
    if c == 0 {
        return Err(Error::domain("softmax over zero channels"));
    }
    let mut out = x.clone();
    out.data_mut().chunks_mut(c).for_each(softmax_in_place);
    Ok(out)
}

pub(crate) fn softmax_channels_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let c = y.c();
    let mut dx = dy.clone();
    for (d, s) in dx.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
        let dot: T = d.iter().zip(s).map(|(&a, &b)| a * b).sum();
        for (dv, &sv) in d.iter_mut().zip(s) {
            *dv = sv * (*dv - dot);
        }
    }
    dx
}

/// One output coordinate's two source taps and the weight of the upper tap.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap<T> {
    pub lo: usize,
    pub hi: usize,
    pub frac: T,
}

/// Half-pixel-center sampling positions along one axis.
pub(crate) fn bilinear_taps<T: Real>(n_in: usize, n_out: usize) -> Vec<Tap<T>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            Tap {
                lo,
                hi,
                frac: T::lit(src - lo as f64),
            }
        })
        .collect()
}

/// Bilinear resampling with half-pixel centers (align-corners off) and edge clamping.
pub fn resize_bilinear<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (h, w, c) = x.expect_rank3("resize_bilinear")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::domain("resize_bilinear to an empty size"));
    }
    if h == 0 || w == 0 {
        return Err(Error::domain("resize_bilinear of an empty image"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let ty = bilinear_taps::<T>(h, out_h);
    let tx = bilinear_taps::<T>(w, out_w);
    let src = x.data();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for r in &ty {
        for q in &tx {
            let p00 = (r.lo * w + q.lo) * c;
            let p01 = (r.lo * w + q.hi) * c;
            let p10 = (r.hi * w + q.lo) * c;
            let p11 = (r.hi * w + q.hi) * c;
            for ch in 0..c {
                // Lerp form keeps constant inputs exactly constant.
                let top = src[p00 + ch] + q.frac * (src[p01 + ch] - src[p00 + ch]);
                let bot = src[p10 + ch] + q.frac * (src[p11 + ch] - src[p10 + ch]);
                out.push(top + r.frac * (bot - top));
            }
        }
    }
    Tensor::new(&[out_h, out_w, c], out)
}

pub(crate) fn resize_bilinear_backward<T: Real>(dy: &Tensor<T>, in_h: usize, in_w: usize) -> Tensor<T> {
    let (out_h, out_w, c) = dy.hwc();
    if (out_h, out_w) == (in_h, in_w) {
        return dy.clone();
    }
    let ty = bilinear_taps::<T>(in_h, out_h);
    let tx = bilinear_taps::<T>(in_w, out_w);
    let mut dx = vec![T::zero(); in_h * in_w * c];
    let g = dy.data();
    for (oy, r) in ty.iter().enumerate() {
        for (ox, q) in tx.iter().enumerate() {
            let base = (oy * out_w + ox) * c;
            let w00 = (T::one() - r.frac) * (T::one() - q.frac);
            let w01 = (T::one() - r.frac) * q.frac;
            let w10 = r.frac * (T::one() - q.frac);
            let w11 = r.frac * q.frac;
            let p00 = (r.lo * in_w + q.lo) * c;
            let p01 = (r.lo * in_w + q.hi) * c;
            let p10 = (r.hi * in_w + q.lo) * c;
            let p11 = (r.hi * in_w + q.hi) * c;
            for ch in 0..c {
                let v = g[base + ch];
                dx[p00 + ch] += v * w00;
                dx[p01 + ch] += v * w01;
                dx[p10 + ch] += v * w10;
                dx[p11 + ch] += v * w11;
            }
        }
    }
    Tensor::new(&[in_h, in_w, c], dx).expect("input dims")
}

/// Adaptive bins `[floor(i*n/m), ceil((i+1)*n/m))` covering an axis of length `n`.
pub fn adaptive_bins(n_in: usize, n_out: usize) -> Vec<(usize, usize)> {
    (0..n_out)
        .map(|i| ((i * n_in) / n_out, ((i + 1) * n_in).div_ceil(n_out)))
        .collect()
}

/// Mean that depends only on the multiset of values: sorted, then accumulated
/// as offsets from the smallest element. Constant inputs return exactly that
/// constant, and any permutation of the inputs returns identical bits.
fn multiset_mean<T: Real>(values: &mut [T]) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let pivot = values[0];
    let spread: T = values.iter().map(|&v| v - pivot).sum();
    pivot + spread / T::lit(values.len() as f64)
}

/// Adaptive average pooling to an `out_h x out_w` grid.
pub fn avg_pool_to<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (h, w, c) = x.expect_rank3("avg_pool_to")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::domain("avg_pool_to an empty grid"));
    }
    if out_h > h || out_w > w {
        return Err(Error::domain(format!(
            "avg_pool_to {out_h}x{out_w} is larger than the {h}x{w} input"
        )));
    }
    let by = adaptive_bins(h, out_h);
    let bx = adaptive_bins(w, out_w);
    let src = x.data();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    let mut scratch = Vec::new();
    for &(y0, y1) in &by {
        for &(x0, x1) in &bx {
            for ch in 0..c {
                scratch.clear();
                for y in y0..y1 {
                    for xx in x0..x1 {
                        scratch.push(src[(y * w + xx) * c + ch]);
                    }
                }
                out.push(multiset_mean(&mut scratch));
            }
        }
    }
    Tensor::new(&[out_h, out_w, c], out)
}

pub(crate) fn avg_pool_to_backward<T: Real>(dy: &Tensor<T>, in_h: usize, in_w: usize) -> Tensor<T> {
    let (out_h, out_w, c) = dy.hwc();
    let by = adaptive_bins(in_h, out_h);
    let bx = adaptive_bins(in_w, out_w);
    let mut dx = vec![T::zero(); in_h * in_w * c];
    for (oy, &(y0, y1)) in by.iter().enumerate() {
        for (ox, &(x0, x1)) in bx.iter().enumerate() {
            let inv = T::one() / T::lit(((y1 - y0) * (x1 - x0)) as f64);
            let g = &dy.data()[(oy * out_w + ox) * c..][..c];
            for y in y0..y1 {
                for xx in x0..x1 {
                    let base = (y * in_w + xx) * c;
                    for ch in 0..c {
                        dx[base + ch] += g[ch] * inv;
                    }
                }
            }
        }
    }
    Tensor::new(&[in_h, in_w, c], dx).expect("input dims")
}

/// Concatenate along channels; output channel order follows input order.
pub fn concat_channels<T: Real>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::shape("concat_channels of an empty list"))?;
    let (h, w, _) = first.expect_rank3("concat_channels")?;
    let mut total = 0;
    for x in xs {
        let (xh, xw, xc) = x.expect_rank3("concat_channels")?;
        if (xh, xw) != (h, w) {
            return Err(Error::shape(format!(
                "concat_channels: spatial size {xh}x{xw} differs from {h}x{w}"
            )));
        }
        total += xc;
    }
    let mut out = Vec::with_capacity(h * w * total);
    for p in 0..h * w {
        for x in xs {
            let c = x.c();
            out.extend_from_slice(&x.data()[p * c..(p + 1) * c]);
        }
    }
    Tensor::new(&[h, w, total], out)
}

pub(crate) fn split_channels<T: Real>(dy: &Tensor<T>, widths: &[usize]) -> Vec<Tensor<T>> {
    let (h, w, total) = dy.hwc();
    let mut parts: Vec<Vec<T>> = widths.iter().map(|&c| Vec::with_capacity(h * w * c)).collect();
    for px in dy.data().chunks(total) {
        let mut off = 0;
        for (part, &c) in parts.iter_mut().zip(widths) {
            part.extend_from_slice(&px[off..off + c]);
            off += c;
        }
    }
    parts
        .into_iter()
        .zip(widths)
        .map(|(d, &c)| Tensor::new(&[h, w, c], d).expect("split dims"))
        .collect()
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, |x, y| x + y)
}

pub fn sub<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, |x, y| x - y)
}

pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, |x, y| x * y)
}

pub fn div<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.zip_map(b, |x, y| x / y)
}

pub fn leaky_relu<T: Real>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { v * slope })
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus_scalar<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn clamp_unit<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()).min(T::one()))
}

/// Adds a per-channel bias `b` (length `c`) to every pixel.
pub fn add_channel_bias<T: Real>(x: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, c) = x.expect_rank3("add_channel_bias")?;
    if b.len() != c {
        return Err(Error::shape(format!(
            "bias of length {} for {c} channels",
            b.len()
        )));
    }
    let mut out = x.clone();
    for px in out.data_mut().chunks_mut(c) {
        for (v, &bb) in px.iter_mut().zip(b.data()) {
            *v += bb;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_geometry() {
        let g = ConvGeom::new((8, 6, 1), (2, 3, 3, 1), 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w, g.pad_top, g.pad_left), (4, 3, 0, 0));
        let g = ConvGeom::new((7, 7, 1), (2, 3, 3, 1), 1, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w, g.pad_top, g.pad_left), (7, 7, 1, 1));
        let g = ConvGeom::new((8, 8, 1), (2, 2, 2, 1), 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.pad_top), (4, 0));
    }

    #[test]
    fn valid_padding_rejects_oversized_kernel() {
        assert!(ConvGeom::new((2, 2, 1), (1, 3, 3, 1), 1, Padding::Valid).is_err());
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = Tensor::<f32>::zeros(&[4, 4, 3]);
        let w = ConvWeight::new(2, 3, 3, 2, vec![0.0; 36]).unwrap();
        assert!(matches!(conv2d(&x, &w, 1, Padding::Same), Err(Error::Shape(_))));
    }

    #[test]
    fn adaptive_bins_cover_axis() {
        assert_eq!(adaptive_bins(48, 6), vec![(0, 8), (8, 16), (16, 24), (24, 32), (32, 40), (40, 48)]);
        assert_eq!(adaptive_bins(5, 3), vec![(0, 2), (1, 4), (3, 5)]);
    }

    #[test]
    fn multiset_mean_is_order_free() {
        let mut a = vec![0.1f32, 0.7, 0.3, 1e-3, 5.0];
        let mut b = vec![5.0f32, 1e-3, 0.3, 0.1, 0.7];
        assert_eq!(multiset_mean(&mut a).to_bits(), multiset_mean(&mut b).to_bits());
        let mut c = vec![0.1f32; 10];
        assert_eq!(multiset_mean(&mut c), 0.1);
    }

    #[test]
    fn softmax_rejects_empty() {
        assert!(matches!(softmax::<f64>(&[]), Err(Error::Domain(_))));
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus_scalar(0.0f64) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus_scalar(1000.0f64), 1000.0);
        assert!(softplus_scalar(-1000.0f64) >= 0.0);
    }
}
