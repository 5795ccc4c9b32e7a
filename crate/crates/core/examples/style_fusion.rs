//! Multi-scale style fusion: every query coordinate mixes a local value
//! with three pyramid-pooled ones.

use aprnet::musf::{build_pyramid, fuse, pyramid_sizes};
use aprnet::autodiff::Tape;
use aprnet::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> aprnet::Result<()> {
    println!("pyramid sizes for a 16x48 base: {:?}", pyramid_sizes(16, 48)?);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::<f32>::new();
    let q = tape.constant(Tensor::randn(&[32, 96, 8], 1.0, &mut rng));
    let k = tape.constant(Tensor::randn(&[16, 48, 8], 1.0, &mut rng));
    let v = tape.constant(Tensor::rand_uniform(&[16, 48, 5], 0.0, 1.0, &mut rng));
    let keys = build_pyramid(&mut tape, k)?;
    let values = build_pyramid(&mut tape, v)?;
    let (out, weights) = fuse(&mut tape, q, keys, values)?;
    let w = &weights;
    let mean: Vec<f32> = (0..4).map(|l| w.data().iter().skip(l).step_by(4).sum::<f32>() / (32.0 * 96.0)).collect();
    println!("fused {:?}; mean weight per scale (local, 4x12, 2x6, 1x3): {mean:.3?}", tape.dims(out));
    Ok(())
}
