//! Attention over a sparse k x k grid of style pixels with dilation m.

use aprnet::pixamp::{sample_attention_tensors, SamplingGrid};
use aprnet::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> aprnet::Result<()> {
    let grid = SamplingGrid::default();
    println!("k={} m={}: {} candidates spanning {} pixels", grid.k(), grid.m(), grid.candidates(), grid.span());
    println!("axis offsets {:?}", grid.axis_offsets());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = Tensor::<f64>::randn(&[16, 48, 8], 1.0, &mut rng);
    let k = Tensor::<f64>::randn(&[16, 48, 8], 1.0, &mut rng);
    let style = Tensor::<f64>::rand_uniform(&[16, 48, 3], 0.0, 1.0, &mut rng);
    let (out, weights) = sample_attention_tensors(&q, &k, &style, grid)?;
    let peak = weights.pixel(8, 24).iter().cloned().fold(0.0, f64::max);
    println!("output {:?}; strongest candidate at (8, 24) has weight {peak:.3}", out.dims());

    // One candidate reproduces the style image exactly.
    let (copy, _) = sample_attention_tensors(&q, &k, &style, SamplingGrid::new(1, 4)?)?;
    println!("k = 1 returns the style image: {}", copy == style);
    Ok(())
}
