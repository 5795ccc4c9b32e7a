//! A few dozen training steps on four tiny synthetic triplets.
//!
//! Pass a step count as the first argument (default 40).

use aprnet::data::{generate, DatagenConfig, Source, TripletConfig};
use aprnet::metrics::evaluate;
use aprnet::training::{train, TrainConfig};

fn main() -> aprnet::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let cfg = DatagenConfig {
        triplet: TripletConfig::with_size(32, 96),
        synth_extra_width: 32,
        ..DatagenConfig::default()
    };
    let data: Vec<_> = generate(&Source::Synthetic(4), &cfg, 0, 4)?.into_iter().map(|g| g.triplet).collect();
    let tc = TrainConfig {
        batch: 1,
        steps,
        ..TrainConfig::default()
    };
    let before = evaluate(&data, &aprnet::RenderModel::new(tc.render.clone(), tc.seed)?)?;
    let out = train(tc, &data, |l| {
        if l.step % 10 == 0 {
            println!("step {:3}: content {:.4} perceptual {:.4} adv {:.3} disc {:.3}", l.step, l.content, l.perceptual, l.adversarial, l.discriminator);
        }
    })?;
    let after = evaluate(&data, &out.model)?;
    println!("PSNR {:.2} -> {:.2} dB", before.mean_psnr, after.mean_psnr);
    Ok(())
}
