//! Reverse-mode differentiation over the tensor operator set.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles together
//! with its forward value. [`Tape::backward`] walks the records in reverse
//! creation order (a valid reverse topological order, since a node can only
//! reference earlier nodes) and accumulates gradients into every node that
//! depends on a leaf created with [`Tape::leaf`].
//!
//! Operations that are awkward to express through the primitive set (the two
//! attention composites) plug in through [`CompositeOp`].

pub mod gradcheck;

use crate::error::{Error, Result};
use crate::ops::{self, ConvGeom, Padding};
use crate::tensor::{Real, Tensor};

pub use gradcheck::{check_gradients, gradcheck, GradReport, GradcheckConfig, LeafReport};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation with a hand-written adjoint.
pub trait CompositeOp<T: Real> {
    fn name(&self) -> &'static str;

    /// Gradients for each input, `None` where `needs[i]` is false.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>>;
}

enum Op<T: Real> {
    Leaf,
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    Scale(Var, T),
    ChannelBias(Var, Var),
    LeakyRelu(Var, T),
    Sqrt(Var),
    Square(Var),
    Abs(Var),
    Softplus(Var),
    SoftmaxChannels(Var),
    Resize(Var),
    AvgPool(Var),
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Composite(Vec<Var>, Box<dyn CompositeOp<T>>),
}

struct Node<T: Real> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Single-threaded record of a computation.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
    dims: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `v`, or `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, zeros when the output does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.dims[v.0]))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "scalar() on a node of shape {:?}", t.dims());
        t.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Copy of `v` cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn unary(&mut self, x: Var, op: Op<T>, value: Tensor<T>) -> Var {
        let rg = self.nodes[x.0].requires_grad;
        self.push(op, value, rg)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, value: Tensor<T>) -> Var {
        let rg = self.any_grad(&[a, b]);
        self.push(op, value, rg)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: Padding) -> Result<Var> {
        let geom = ops::conv2d_geom(self.value(x), self.value(w), stride, padding)?;
        let out = ops::conv2d_raw(self.value(x), self.value(w), stride, padding)?;
        Ok(self.binary(x, w, Op::Conv2d { x, w, geom }, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        Ok(self.binary(a, b, Op::Add(a, b), out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::sub(self.value(a), self.value(b))?;
        Ok(self.binary(a, b, Op::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::mul(self.value(a), self.value(b))?;
        Ok(self.binary(a, b, Op::Mul(a, b), out))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::div(self.value(a), self.value(b))?;
        Ok(self.binary(a, b, Op::Div(a, b), out))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.unary(x, Op::AddScalar(x), out)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.unary(x, Op::Scale(x, c), out)
    }

    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let out = ops::add_channel_bias(self.value(x), self.value(b))?;
        Ok(self.binary(x, b, Op::ChannelBias(x, b), out))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = ops::leaky_relu(self.value(x), slope);
        self.unary(x, Op::LeakyRelu(x, slope), out)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::sqrt);
        self.unary(x, Op::Sqrt(x), out)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.unary(x, Op::Square(x), out)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::abs);
        self.unary(x, Op::Abs(x), out)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(ops::softplus_scalar);
        self.unary(x, Op::Softplus(x), out)
    }

    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let out = ops::softmax_channels(self.value(x))?;
        Ok(self.unary(x, Op::SoftmaxChannels(x), out))
    }

    pub fn resize(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let out = ops::resize_bilinear(self.value(x), h, w)?;
        Ok(self.unary(x, Op::Resize(x), out))
    }

    pub fn avg_pool(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let out = ops::avg_pool_to(self.value(x), h, w)?;
        Ok(self.unary(x, Op::AvgPool(x), out))
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let out = ops::concat_channels(&refs)?;
        let rg = self.any_grad(xs);
        Ok(self.push(Op::Concat(xs.to_vec()), out, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.unary(x, Op::Sum(x), Tensor::full(&[1], s))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let s = self.value(x).mean();
        self.unary(x, Op::Mean(x), Tensor::full(&[1], s))
    }

    /// Records an operation whose forward value was computed by the caller.
    pub fn composite(&mut self, inputs: Vec<Var>, output: Tensor<T>, op: Box<dyn CompositeOp<T>>) -> Var {
        let rg = self.any_grad(&inputs);
        self.push(Op::Composite(inputs, op), output, rg)
    }

    /// Gradients of the one-element node `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_len = self.value(root).len();
        if root_len != 1 {
            return Err(Error::domain(format!(
                "backward needs a scalar output, got shape {:?}",
                self.dims(root)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.dims(root), T::one()));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let need = |v: &Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Conv2d { x, w, geom } => {
                    let (dx, dw) = ops::conv2d_backward(
                        self.value(*x),
                        self.value(*w),
                        geom,
                        &g,
                        need(x),
                        need(w),
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut grads[x.0], dx);
                    }
                    if let Some(dw) = dw {
                        accumulate(&mut grads[w.0], dw);
                    }
                }
                Op::Add(a, b) => {
                    if need(b) {
                        accumulate(&mut grads[b.0], g.clone());
                    }
                    if need(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Sub(a, b) => {
                    if need(b) {
                        accumulate(&mut grads[b.0], g.map(|v| -v));
                    }
                    if need(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Mul(a, b) => {
                    if need(a) {
                        let d = g.zip_map(self.value(*b), |gv, bv| gv * bv)?;
                        accumulate(&mut grads[a.0], d);
                    }
                    if need(b) {
                        let d = g.zip_map(self.value(*a), |gv, av| gv * av)?;
                        accumulate(&mut grads[b.0], d);
                    }
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    if need(a) {
                        accumulate(&mut grads[a.0], g.zip_map(bv, |gv, d| gv / d)?);
                    }
                    if need(b) {
                        // d(a/b)/db = -(a/b)/b
                        let q = &node.value;
                        let t = g.zip_map(q, |gv, qv| -gv * qv)?;
                        accumulate(&mut grads[b.0], t.zip_map(bv, |tv, d| tv / d)?);
                    }
                }
                Op::AddScalar(x) => accumulate(&mut grads[x.0], g),
                Op::Scale(x, c) => {
                    let c = *c;
                    accumulate(&mut grads[x.0], g.map(|v| v * c));
                }
                Op::ChannelBias(x, b) => {
                    if need(b) {
                        let c = self.value(*b).len();
                        let mut db = vec![T::zero(); c];
                        for px in g.data().chunks(c) {
                            for (acc, &v) in db.iter_mut().zip(px) {
                                *acc += v;
                            }
                        }
                        let db = Tensor::new(self.dims(*b), db)?;
                        accumulate(&mut grads[b.0], db);
                    }
                    if need(x) {
                        accumulate(&mut grads[x.0], g);
                    }
                }
                Op::LeakyRelu(x, slope) => {
                    let slope = *slope;
                    let d = g.zip_map(self.value(*x), |gv, xv| if xv > T::zero() { gv } else { gv * slope })?;
                    accumulate(&mut grads[x.0], d);
                }
                Op::Sqrt(x) => {
                    let half = T::lit(0.5);
                    let d = g.zip_map(&node.value, |gv, yv| gv * half / yv)?;
                    accumulate(&mut grads[x.0], d);
                }
                Op::Square(x) => {
                    let two = T::lit(2.0);
                    let d = g.zip_map(self.value(*x), |gv, xv| two * xv * gv)?;
                    accumulate(&mut grads[x.0], d);
                }
                Op::Abs(x) => {
                    let d = g.zip_map(self.value(*x), |gv, xv| {
                        if xv > T::zero() {
                            gv
                        } else if xv < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })?;
                    accumulate(&mut grads[x.0], d);
                }
                Op::Softplus(x) => {
                    let d = g.zip_map(self.value(*x), |gv, xv| gv * ops::sigmoid_scalar(xv))?;
                    accumulate(&mut grads[x.0], d);
                }
                Op::SoftmaxChannels(x) => {
                    let d = ops::softmax_channels_backward(&node.value, &g);
                    accumulate(&mut grads[x.0], d);
                }
                Op::Resize(x) => {
                    let (h, w, _) = self.value(*x).hwc();
                    accumulate(&mut grads[x.0], ops::resize_bilinear_backward(&g, h, w));
                }
                Op::AvgPool(x) => {
                    let (h, w, _) = self.value(*x).hwc();
                    accumulate(&mut grads[x.0], ops::avg_pool_to_backward(&g, h, w));
                }
                Op::Concat(xs) => {
                    let widths: Vec<usize> = xs.iter().map(|v| self.value(*v).c()).collect();
                    for (v, part) in xs.iter().zip(ops::split_channels(&g, &widths)) {
                        if need(v) {
                            accumulate(&mut grads[v.0], part);
                        }
                    }
                }
                Op::Sum(x) => {
                    let gv = g.data()[0];
                    accumulate(&mut grads[x.0], Tensor::full(self.dims(*x), gv));
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    let gv = g.data()[0] / T::lit(n as f64);
                    accumulate(&mut grads[x.0], Tensor::full(self.dims(*x), gv));
                }
                Op::Composite(inputs, op) => {
                    let values: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
                    let needs: Vec<bool> = inputs.iter().map(need).collect();
                    let parts = op.backward(&values, &node.value, &g, &needs);
                    for ((v, part), n) in inputs.iter().zip(parts).zip(needs) {
                        if let (true, Some(p)) = (n, part) {
                            accumulate(&mut grads[v.0], p);
                        }
                    }
                }
            }
        }

        // Intermediate gradients were consumed; only leaves keep theirs.
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        let dims = self.nodes.iter().map(|n| n.value.dims().to_vec()).collect();
        Ok(Gradients { grads, dims })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(2, 3, 2, |y, x, c| (y + x + c) as f64));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert!(g.wrt(x).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sum_of_squares_gradient_is_2x() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xv = Tensor::<f64>::randn(&[3, 4, 2], 1.0, &mut rng);
        let mut tape = Tape::new();
        let x = tape.leaf(xv.clone());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap().wrt(x);
        for (gv, xv) in g.data().iter().zip(xv.data()) {
            assert_eq!(*gv, 2.0 * xv);
        }
    }

    #[test]
    fn non_scalar_root_is_domain_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2, 1]));
        assert!(matches!(tape.backward(x), Err(Error::Domain(_))));
    }

    #[test]
    fn unused_leaf_gradient_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[2, 2, 1], 3.0));
        let unused = tape.leaf(Tensor::full(&[1, 2, 1], 3.0));
        let s = tape.mean(x);
        let g = tape.backward(s).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused), Tensor::zeros(&[1, 2, 1]));
        assert!(g.wrt(x).data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 2], 2.0));
        let c = tape.constant(Tensor::full(&[1, 1, 2], 5.0));
        let p = tape.mul(x, c).unwrap();
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.wrt(x).data(), &[5.0, 5.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 1], 2.0));
        let sq = tape.square(x);
        let d = tape.detach(sq);
        let p = tape.mul(d, x).unwrap();
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).data(), &[4.0]);
    }
}
