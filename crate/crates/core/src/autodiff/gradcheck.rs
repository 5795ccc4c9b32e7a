//! Central finite-difference gradient checking at 64-bit.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    /// Perturbation for central differences.
    pub eps: f64,
    /// Pass threshold on `|analytic - numeric| / (1 + |analytic|)`.
    pub tol: f64,
    /// Coordinates checked per leaf; larger leaves are sub-sampled.
    pub max_coords_per_leaf: usize,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            tol: 1e-4,
            max_coords_per_leaf: 48,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeafReport {
    pub leaf: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub leaves: Vec<LeafReport>,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// Compares `grad_fn` against central differences of `value_fn`.
pub fn check_gradients<F, G>(value_fn: F, grad_fn: G, leaves: &[Tensor<f64>], cfg: &GradcheckConfig) -> Result<GradReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<f64>,
    G: Fn(&[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>,
{
    let base = value_fn(leaves)?;
    if !base.is_finite() {
        return Err(Error::Gradcheck(format!("forward value is {base}")));
    }
    let analytic = grad_fn(leaves)?;
    if analytic.len() != leaves.len() {
        return Err(Error::Gradcheck(format!(
            "{} gradients for {} leaves",
            analytic.len(),
            leaves.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut point: Vec<Tensor<f64>> = leaves.to_vec();
    let mut reports = Vec::with_capacity(leaves.len());

    for (li, grad) in analytic.iter().enumerate() {
        if grad.dims() != leaves[li].dims() {
            return Err(Error::Gradcheck(format!(
                "gradient for leaf {li} has shape {:?}, leaf is {:?}",
                grad.dims(),
                leaves[li].dims()
            )));
        }
        let n = leaves[li].len();
        let mut coords: Vec<usize> = if n <= cfg.max_coords_per_leaf {
            (0..n).collect()
        } else {
            sample(&mut rng, n, cfg.max_coords_per_leaf).into_vec()
        };
        coords.sort_unstable();

        let mut report = LeafReport {
            leaf: li,
            checked: coords.len(),
            max_rel_error: 0.0,
            worst_coord: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for &j in &coords {
            let orig = point[li].data()[j];
            point[li].data_mut()[j] = orig + cfg.eps;
            let plus = value_fn(&point)?;
            point[li].data_mut()[j] = orig - cfg.eps;
            let minus = value_fn(&point)?;
            point[li].data_mut()[j] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Gradcheck(format!(
                    "non-finite forward value at leaf {li} coordinate {j}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = grad.data()[j];
            let err = (a - numeric).abs() / (1.0 + a.abs());
            if err > report.max_rel_error || j == coords[0] {
                report.max_rel_error = err;
                report.worst_coord = j;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        reports.push(report);
    }

    let max_rel_error = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    Ok(GradReport {
        leaves: reports,
        max_rel_error,
        tol: cfg.tol,
    })
}

/// Gradient check of a scalar function built on a [`Tape`].
///
/// `build` receives the tape and one leaf per input tensor, and returns the
/// scalar output node.
pub fn gradcheck<F>(build: F, leaves: &[Tensor<f64>], cfg: &GradcheckConfig) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let run = |inputs: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    check_gradients(
        |inputs| {
            let (tape, _, out) = run(inputs)?;
            Ok(tape.scalar(out))
        },
        |inputs| {
            let (tape, vars, out) = run(inputs)?;
            let grads = tape.backward(out)?;
            Ok(vars.iter().map(|&v| grads.wrt(v)).collect())
        },
        leaves,
        cfg,
    )
}
