//! Reverse-mode gradients on the tape, checked against central differences.

use aprnet::autodiff::{gradcheck, GradcheckConfig, Tape};
use aprnet::ops::Padding;
use aprnet::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> aprnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::<f64>::rand_uniform(&[5, 5, 2], -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::rand_uniform(&[3, 3, 3, 2], -1.0, 1.0, &mut rng);

    let mut tape = Tape::new();
    let (xv, wv) = (tape.leaf(x.clone()), tape.leaf(w.clone()));
    let y = tape.conv2d(xv, wv, 1, Padding::Same)?;
    let y = tape.leaky_relu(y, 0.2);
    let loss = tape.mean(y);
    let grads = tape.backward(loss)?;
    println!("loss {:.6}, |dL/dw|max {:.6}", tape.scalar(loss), grads.wrt(wv).max_abs_diff(&Tensor::zeros(&[3, 3, 3, 2])));

    let report = gradcheck(
        |t, v| {
            let y = t.conv2d(v[0], v[1], 1, Padding::Same)?;
            let y = t.leaky_relu(y, 0.2);
            Ok(t.mean(y))
        },
        &[x, w],
        &GradcheckConfig::default(),
    )?;
    println!("finite differences agree: {} (max rel error {:.2e})", report.passed(), report.max_rel_error);
    Ok(())
}
