//! Pixel-wise modulation with demodulation: outputs keep unit variance
//! whatever the style, and scaling the style changes nothing.

use aprnet::pixymod::{modconv_forward, DEFAULT_EPS};
use aprnet::tensor::{ConvWeight, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn std_dev(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn main() -> aprnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let content = Tensor::<f64>::randn(&[100, 100, 4], 1.0, &mut rng);
    let style = Tensor::<f64>::rand_uniform(&[100, 100, 4], 0.2, 3.0, &mut rng);
    let w = ConvWeight::from_tensor(Tensor::randn(&[2, 3, 3, 4], 1.0, &mut rng))?;

    let n = modconv_forward(&content, &style, &w, DEFAULT_EPS)?;
    for ch in 0..2 {
        let vals: Vec<f64> = n.data().iter().skip(ch).step_by(2).copied().collect();
        println!("output channel {ch}: std {:.4}", std_dev(&vals));
    }
    let scaled = modconv_forward(&content, &style.map(|v| 10.0 * v), &w, DEFAULT_EPS)?;
    println!("max change after scaling the style by 10: {:.2e}", scaled.max_abs_diff(&n));
    Ok(())
}
