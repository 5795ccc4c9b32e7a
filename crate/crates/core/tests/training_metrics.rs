//! Losses, metrics, checkpoints and the training loop.

use aprnet::autodiff::Tape;
use aprnet::data::{generate, DatagenConfig, Source, Triplet, TripletConfig};
use aprnet::metrics::{evaluate, psnr, ssim, IdentityOracle, Reconstruct};
use aprnet::params::{read_checkpoint, save_checkpoint};
use aprnet::tensor::{ConvWeight, Tensor};
use aprnet::training::{bce_with_logits, perceptual_loss, train, LossWeights, PerceptualNet, TrainConfig, Trainer};
use aprnet::{RenderConfig, RenderModel};

fn fixture_a() -> Tensor<f32> {
    Tensor::from_fn(16, 20, 3, |y, x, c| (0.5 + 0.4 * (0.37 * y as f64 + 0.23 * x as f64 + 0.9 * c as f64).sin()) as f32)
}

/// `fixture_a` plus a cosine ripple of amplitude `amp`, clipped to `[0, 1]`.
fn fixture_b(amp: f64) -> Tensor<f32> {
    let a = fixture_a();
    Tensor::from_fn(16, 20, 3, |y, x, c| {
        let d = (amp * (0.5 * y as f64 - 0.31 * x as f64 + c as f64).cos()) as f32;
        (a.at(y, x, c) + d).clamp(0.0, 1.0)
    })
}

#[test]
fn bce_matches_direct_formula() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(&[1, 4, 1], vec![-2.0, 0.5, 3.0, -0.1]).unwrap());
    let real = bce_with_logits(&mut tape, x, true).unwrap();
    let fake = bce_with_logits(&mut tape, x, false).unwrap();
    assert!((tape.scalar(real) - 0.8484972517175982).abs() < 1e-14);
    assert!((tape.scalar(fake) - 1.198497251717598).abs() < 1e-14);
}

#[test]
fn saturated_discriminator_has_near_zero_loss() {
    let mut tape = Tape::<f64>::new();
    let hi = tape.constant(Tensor::full(&[2, 2, 1], 20.0));
    let lo = tape.constant(Tensor::full(&[2, 2, 1], -20.0));
    let real = bce_with_logits(&mut tape, hi, true).unwrap();
    let fake = bce_with_logits(&mut tape, lo, false).unwrap();
    assert!(tape.scalar(real) < 1e-8 && tape.scalar(fake) < 1e-8);
}

#[test]
fn one_stage_perceptual_loss_by_hand() {
    let w = ConvWeight::new(1, 1, 1, 3, vec![0.7, -0.4, 0.2]).unwrap();
    let net = PerceptualNet::<f64>::from_stages(vec![(w, 1)]).unwrap();
    let a = Tensor::from_fn(3, 3, 3, |y, x, c| (0.5 * y as f64 + 0.3 * x as f64 + c as f64).sin());
    let b = Tensor::from_fn(3, 3, 3, |y, x, c| (0.2 * y as f64 - 0.6 * x as f64 + 0.5 * c as f64).cos());
    let mut tape = Tape::new();
    let (av, bv) = (tape.constant(a), tape.constant(b));
    let l = perceptual_loss(&mut tape, &net, av, bv).unwrap();
    assert!((tape.scalar(l) - 0.07144989031736858).abs() < 1e-14);
    let r = perceptual_loss(&mut tape, &net, bv, av).unwrap();
    assert_eq!(tape.scalar(l), tape.scalar(r));
    let z = perceptual_loss(&mut tape, &net, av, av).unwrap();
    assert_eq!(tape.scalar(z), 0.0);
}

#[test]
fn psnr_and_ssim_on_fixture_pair() {
    let (a, b) = (fixture_a(), fixture_b(0.05));
    assert!((psnr(&a, &b).unwrap() - 29.030519518835835).abs() < 1e-9);
    assert!((ssim(&a, &b).unwrap() - 0.9842370471223846).abs() < 1e-9);
    assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
}

struct Perturbed;

impl Reconstruct for Perturbed {
    fn reconstruct(&self, t: &Triplet) -> aprnet::Result<Tensor<f32>> {
        // The style channel carries the perturbation amplitude for this test.
        Ok(fixture_b(t.style.at(0, 0, 0) as f64))
    }
}

#[test]
fn evaluate_averages_per_image_scores() {
    let set: Vec<Triplet> = (0..3)
        .map(|i| Triplet {
            content: Tensor::zeros(&[16, 20, 1]),
            style: Tensor::full(&[16, 20, 3], 0.02 * (i + 1) as f32),
            ground_truth: fixture_a(),
        })
        .collect();
    let r = evaluate(&set, &Perturbed).unwrap();
    assert!((r.mean_psnr - 31.801644640460882).abs() < 1e-6);
    assert!((r.mean_ssim - 0.9882499909809486).abs() < 1e-6);
    let id = evaluate(&set, &IdentityOracle).unwrap();
    assert_eq!((id.mean_psnr, id.mean_ssim), (100.0, 1.0));
    assert_eq!(evaluate(&set, &Perturbed).unwrap(), r);
    assert!(evaluate(&[], &IdentityOracle).is_err());
}

fn tiny_data(n: usize) -> Vec<Triplet> {
    let cfg = DatagenConfig {
        triplet: TripletConfig::with_size(32, 32),
        synth_extra_width: 16,
        ..DatagenConfig::default()
    };
    generate(&Source::Synthetic(n), &cfg, 3, n).unwrap().into_iter().map(|g| g.triplet).collect()
}

fn tiny_config(steps: usize) -> TrainConfig {
    let render = RenderConfig {
        channel_plan: vec![8, 8],
        d_s: 8,
        d_f: 8,
        ..RenderConfig::default()
    };
    TrainConfig {
        render,
        batch: 2,
        steps,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_seed_deterministic() {
    let data = tiny_data(3);
    let a = train(tiny_config(3), &data, |_| {}).unwrap();
    let b = train(tiny_config(3), &data, |_| {}).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.model.params.values(), b.model.params.values());
    assert!(a.curve.iter().all(|l| l.total.is_finite() && l.discriminator > 0.0));
}

#[test]
fn zero_steps_leaves_the_initialization() {
    let cfg = tiny_config(0);
    let init = RenderModel::<f32>::new(cfg.render.clone(), cfg.seed).unwrap();
    let out = train(cfg, &tiny_data(1), |_| {}).unwrap();
    assert!(out.curve.is_empty());
    assert_eq!(out.model.params.values(), init.params.values());
}

#[test]
fn checkpoint_round_trip_preserves_renders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(1);
    let data = tiny_data(1);
    let out = train(cfg.clone(), &data, |_| {}).unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &out.model.params).unwrap();
    assert_eq!(read_checkpoint(&path).unwrap().len(), out.model.params.len());
    let back = RenderModel::from_checkpoint(cfg.render.clone(), &path).unwrap();
    let (t, _) = (&data[0], ());
    assert_eq!(back.render(&t.content, &t.style).unwrap(), out.model.render(&t.content, &t.style).unwrap());

    let mut other = cfg.render.clone();
    other.channel_plan = vec![8, 4];
    assert!(RenderModel::from_checkpoint(other, &path).is_err());
}

#[test]
fn content_only_training_reduces_content_loss() {
    let mut cfg = tiny_config(60);
    cfg.weights = LossWeights::new(1.0, 0.0, 0.0).unwrap();
    cfg.batch = 1;
    cfg.lr = 2e-3;
    let data = tiny_data(1);
    let mut trainer = Trainer::new(cfg).unwrap();
    let curve: Vec<f64> = (0..60).map(|_| trainer.step(&data).unwrap().content).collect();
    let first = curve[..5].iter().sum::<f64>() / 5.0;
    let last = curve[55..].iter().sum::<f64>() / 5.0;
    assert!(last < 0.5 * first, "content loss {first} -> {last}");
}

#[test]
fn invalid_training_configs_are_rejected() {
    let mut cfg = tiny_config(1);
    cfg.batch = 0;
    assert!(Trainer::new(cfg).is_err());
    let mut cfg = tiny_config(1);
    cfg.lr = -1.0;
    assert!(Trainer::new(cfg).is_err());
    assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
}
