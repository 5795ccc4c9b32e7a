//! Dense tensors in `(h, w, c)` row-major layout and convolution weights in
//! `(out, k_h, k_w, in)` layout.
//!
//! Tensors are plain owned buffers. Every kernel in [`crate::ops`] takes
//! tensors by reference and returns a fresh tensor, so a tensor is never
//! mutated once it has been handed to another component.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Floating point element type. `f32` is used for rendering and training,
/// `f64` for finite-difference gradient checks.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const NAME: &'static str;

    /// Strided `c <- alpha * a * b + beta * c` for an `m x k` times `k x n` product.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Dense row-major array. Images and feature maps are rank 3 `(h, w, c)`;
/// convolution weights are rank 4 `(out, k_h, k_w, in)`.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("dims", &self.dims)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        Self {
            dims: dims.to_vec(),
            data: vec![value; dims.iter().product()],
        }
    }

    /// Rank-3 image from a closure over `(y, x, channel)`.
    pub fn from_fn(h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data.push(f(y, x, ch));
                }
            }
        }
        Self {
            dims: vec![h, w, c],
            data,
        }
    }

    /// I.i.d. normal entries with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(dims: &[usize], std: f64, rng: &mut R) -> Self {
        let n = dims.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::lit(z * std)
            })
            .collect();
        Self {
            dims: dims.to_vec(),
            data,
        }
    }

    /// I.i.d. uniform entries in `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(dims: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = dims.iter().product();
        let data = (0..n).map(|_| T::lit(rng.random_range(lo..hi))).collect();
        Self {
            dims: dims.to_vec(),
            data,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// `(h, w, c)` of a rank-3 tensor.
    pub fn hwc(&self) -> (usize, usize, usize) {
        assert_eq!(self.dims.len(), 3, "expected a rank-3 tensor, got {:?}", self.dims);
        (self.dims[0], self.dims[1], self.dims[2])
    }

    pub fn h(&self) -> usize {
        self.hwc().0
    }

    pub fn w(&self) -> usize {
        self.hwc().1
    }

    pub fn c(&self) -> usize {
        self.hwc().2
    }

    pub fn at(&self, y: usize, x: usize, ch: usize) -> T {
        let (_, w, c) = self.hwc();
        self.data[(y * w + x) * c + ch]
    }

    pub fn set(&mut self, y: usize, x: usize, ch: usize, value: T) {
        let (_, w, c) = self.hwc();
        self.data[(y * w + x) * c + ch] = value;
    }

    /// Channel vector of the pixel at `(y, x)`.
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let (_, w, c) = self.hwc();
        let start = (y * w + x) * c;
        &self.data[start..start + c]
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        if dims.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} to {dims:?}", self.dims)));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_dims(other, "elementwise op")?;
        Ok(Self {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::lit(self.data.len() as f64)
    }

    pub fn min_value(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn expect_same_dims(&self, other: &Self, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "{what}: shape {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub(crate) fn expect_rank3(&self, what: &str) -> Result<(usize, usize, usize)> {
        if self.dims.len() != 3 {
            return Err(Error::shape(format!(
                "{what}: expected (h, w, c), got {:?}",
                self.dims
            )));
        }
        Ok((self.dims[0], self.dims[1], self.dims[2]))
    }
}

/// Convolution kernel `W[o, ky, kx, i]`.
#[derive(Clone, PartialEq)]
pub struct ConvWeight<T = f32> {
    tensor: Tensor<T>,
}

impl<T: Real> Debug for ConvWeight<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConvWeight").field("dims", &self.tensor.dims).finish()
    }
}

impl<T: Real> ConvWeight<T> {
    pub fn new(out_channels: usize, kh: usize, kw: usize, in_channels: usize, values: Vec<T>) -> Result<Self> {
        Ok(Self {
            tensor: Tensor::new(&[out_channels, kh, kw, in_channels], values)?,
        })
    }

    pub fn from_tensor(tensor: Tensor<T>) -> Result<Self> {
        if tensor.rank() != 4 {
            return Err(Error::shape(format!(
                "conv weight must be (out, k_h, k_w, in), got {:?}",
                tensor.dims()
            )));
        }
        Ok(Self { tensor })
    }

    pub fn out_channels(&self) -> usize {
        self.tensor.dims()[0]
    }

    pub fn kh(&self) -> usize {
        self.tensor.dims()[1]
    }

    pub fn kw(&self) -> usize {
        self.tensor.dims()[2]
    }

    pub fn in_channels(&self) -> usize {
        self.tensor.dims()[3]
    }

    pub fn at(&self, o: usize, ky: usize, kx: usize, i: usize) -> T {
        let d = self.tensor.dims();
        self.tensor.data()[((o * d[1] + ky) * d[2] + kx) * d[3] + i]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(matches!(
            Tensor::<f32>::new(&[2, 2, 3], vec![0.0; 11]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn layout_is_hwc_row_major() {
        let t = Tensor::<f64>::from_fn(2, 3, 2, |y, x, c| (100 * y + 10 * x + c) as f64);
        assert_eq!(t.data()[(3 + 2) * 2 + 1], 121.0);
        assert_eq!(t.at(1, 2, 1), 121.0);
        assert_eq!(t.pixel(0, 1), &[10.0, 11.0]);
    }

    #[test]
    fn conv_weight_indexing() {
        let w = ConvWeight::<f32>::new(2, 3, 3, 4, (0..72).map(|v| v as f32).collect()).unwrap();
        assert_eq!(w.at(1, 2, 0, 3), ((3 + 2) * 3 * 4 + 3) as f32);
        assert_eq!((w.out_channels(), w.kh(), w.kw(), w.in_channels()), (2, 3, 3, 4));
    }
}
