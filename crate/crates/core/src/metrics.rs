//! PSNR and SSIM, and their averages over a triplet set.

use rayon::prelude::*;

use crate::data::{grayscale, Triplet};
use crate::error::{Error, Result};
use crate::renderer::RenderModel;
use crate::tensor::Tensor;

/// Value reported for identical images.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn same_dims(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("cannot compare {:?} with {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// `10 log10(1 / MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    same_dims(a, b)?;
    if a.is_empty() {
        return Err(Error::domain("PSNR of empty images"));
    }
    let se: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let mse = se / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean structural similarity over every fully contained 11x11 Gaussian
/// window of the grayscale images.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    same_dims(a, b)?;
    let (h, w, _) = a.expect_rank3("image")?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::domain(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let (ga, gb) = (grayscale(a), grayscale(b));
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for y in 0..oh {
        for x in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (dy, &ty) in taps.iter().enumerate() {
                for (dx, &tx) in taps.iter().enumerate() {
                    let wt = ty * tx;
                    let va = ga.at(y + dy, x + dx, 0) as f64;
                    let vb = gb.at(y + dy, x + dx, 0) as f64;
                    ma += wt * va;
                    mb += wt * vb;
                    saa += wt * (va * va);
                    sbb += wt * (vb * vb);
                    sab += wt * (va * vb);
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            let num = (2.0 * (ma * mb) + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
            total += num / den;
        }
    }
    Ok(total / (oh * ow) as f64)
}

/// Anything that can reconstruct a triplet's ground truth.
pub trait Reconstruct: Sync {
    fn reconstruct(&self, triplet: &Triplet) -> Result<Tensor<f32>>;
}

impl Reconstruct for RenderModel<f32> {
    fn reconstruct(&self, t: &Triplet) -> Result<Tensor<f32>> {
        self.render(&t.content, &t.style)
    }
}

/// Returns the ground truth unchanged.
pub struct IdentityOracle;

impl Reconstruct for IdentityOracle {
    fn reconstruct(&self, t: &Triplet) -> Result<Tensor<f32>> {
        Ok(t.ground_truth.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScores {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_image: Vec<ImageScores>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Scores every triplet (in parallel) and averages in index order.
pub fn evaluate(data: &[Triplet], model: &dyn Reconstruct) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::config("evaluation set is empty"));
    }
    let per_image = data
        .par_iter()
        .map(|t| {
            let r = model.reconstruct(t)?;
            Ok(ImageScores {
                psnr: psnr(&r, &t.ground_truth)?,
                ssim: ssim(&r, &t.ground_truth)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_image.len() as f64;
    Ok(EvalReport {
        mean_psnr: per_image.iter().map(|s| s.psnr).sum::<f64>() / n,
        mean_ssim: per_image.iter().map(|s| s.ssim).sum::<f64>() / n,
        per_image,
    })
}

/// Table with one row per method.
pub fn format_table(rows: &[(String, EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut s = format!("{:<width$}  {:>8}  {:>6}\n", "Method", "PSNR", "SSIM");
    for (name, r) in rows {
        s.push_str(&format!("{name:<width$}  {:>8.2}  {:>6.4}\n", r.mean_psnr, r.mean_ssim));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Tensor<f32> {
        Tensor::from_fn(16, 20, 3, |y, x, c| ((y * 20 + x) * 3 + c) as f32 / 960.0)
    }

    #[test]
    fn psnr_trivial_cases() {
        let a = ramp();
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let z = Tensor::zeros(&[4, 4, 3]);
        let o = Tensor::full(&[4, 4, 3], 1.0);
        assert_eq!(psnr(&z, &o).unwrap(), 0.0);
        assert!(psnr(&z, &a).is_err());
    }

    #[test]
    fn ssim_identity_and_negative() {
        let a = ramp();
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let neg = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &neg).unwrap() < 1.0);
        assert!(matches!(ssim(&Tensor::zeros(&[8, 30, 3]), &Tensor::zeros(&[8, 30, 3])), Err(Error::Domain(_))));
    }

    #[test]
    fn taps_sum_to_one() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(t[0], t[10]);
    }
}
