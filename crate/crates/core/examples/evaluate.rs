//! PSNR and SSIM of a few reconstructions, in the table format of the
//! `metrics` subcommand.

use aprnet::data::{generate, DatagenConfig, Source, Triplet, TripletConfig};
use aprnet::metrics::{evaluate, format_table, IdentityOracle, Reconstruct};
use aprnet::tensor::Tensor;

/// Returns the style image, a lower bound any renderer should beat.
struct StyleCopy;

impl Reconstruct for StyleCopy {
    fn reconstruct(&self, t: &Triplet) -> aprnet::Result<Tensor<f32>> {
        Ok(t.style.clone())
    }
}

fn main() -> aprnet::Result<()> {
    let cfg = DatagenConfig {
        triplet: TripletConfig::with_size(32, 96),
        ..DatagenConfig::default()
    };
    let data: Vec<_> = generate(&Source::Synthetic(4), &cfg, 0, 4)?.into_iter().map(|g| g.triplet).collect();
    let rows = vec![
        ("identity".to_string(), evaluate(&data, &IdentityOracle)?),
        ("style copy".to_string(), evaluate(&data, &StyleCopy)?),
    ];
    print!("{}", format_table(&rows));
    Ok(())
}
