use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

/// Adam with bias-corrected first and second moments.
#[derive(Clone, Debug)]
pub struct Adam<T: Real = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros = || store.values().iter().map(|t| Tensor::zeros(t.dims())).collect::<Vec<_>>();
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::Training(format!(
                "optimizer tracks {} tensors, got {} gradients",
                self.m.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let step = T::lit(self.lr / c1);
        let (c2s, eps) = (T::lit(c2.sqrt()), T::lit(self.eps));
        for (((p, g), m), v) in store.values_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                *pv -= step * *mv / (vv.sqrt() / c2s + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::<f64>::new();
        store.add("x", Tensor::full(&[2], 1.0));
        let mut opt = Adam::new(&store, 0.1, 0.5, 0.999);
        opt.step(&mut store, &[Tensor::new(&[2], vec![3.0, -0.5]).unwrap()]).unwrap();
        let x = store.values()[0].data();
        assert!((x[0] - 0.9).abs() < 1e-6);
        assert!((x[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        store.add("x", Tensor::full(&[1], 5.0));
        let mut opt = Adam::new(&store, 0.05, 0.9, 0.999);
        for _ in 0..2000 {
            let g = store.values()[0].map(|v| 2.0 * (v - 1.5));
            opt.step(&mut store, &[g]).unwrap();
        }
        assert!((store.values()[0].data()[0] - 1.5).abs() < 1e-3);
    }
}
