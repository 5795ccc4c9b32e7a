//! Same-padded and strided convolution, bilinear resizing and adaptive pooling.

use aprnet::ops::{avg_pool_to, conv2d, resize_bilinear, Padding};
use aprnet::tensor::{ConvWeight, Tensor};

fn main() -> aprnet::Result<()> {
    let x = Tensor::<f32>::from_fn(6, 9, 1, |y, x, _| (y * 9 + x) as f32);
    // A 3x3 box filter.
    let w = ConvWeight::new(1, 3, 3, 1, vec![1.0 / 9.0; 9])?;
    for (stride, padding) in [(1, Padding::Same), (2, Padding::Same), (1, Padding::Valid)] {
        let y = conv2d(&x, &w, stride, padding)?;
        println!("conv stride {stride} {padding:?}: {:?} -> {:?}", x.dims(), y.dims());
    }
    let up = resize_bilinear(&x, 12, 18)?;
    let down = avg_pool_to(&x, 4, 3)?;
    println!("resize to {:?}, pool to {:?}", up.dims(), down.dims());
    println!("pooled row 0: {:?}", &down.data()[..3]);
    Ok(())
}
