//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines are always printed. The
//! toy-overfit criterion trains two generators for 1000 steps each and
//! dominates the runtime.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use aprnet::autodiff::{GradcheckConfig, Tape};
use aprnet::checks::{
    demodulation_stds, gradient_suite, modconv_oracle_error, modconv_scale_error,
    musf_oracle_check, pixamp_oracle_check, pixamp_single_candidate_exact, single_crop_multiset_failures,
};
use aprnet::data::{generate, make_triplet, single_crop, synthesize, DatagenConfig, ShufflePolicy, Source, SynthConfig, Triplet, TripletConfig};
use aprnet::encoders::{Encoder, EncoderKind};
use aprnet::metrics::{evaluate, psnr, ssim, IdentityOracle};
use aprnet::musf::{build_style_cat, pyramid_sizes};
use aprnet::params::ParamStore;
use aprnet::pixamp::{build_sam_inputs, SamplingGrid};
use aprnet::tensor::Tensor;
use aprnet::training::{train, TrainConfig};
use aprnet::{RenderConfig, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: u64) -> (bool, String) {
    (elapsed.as_secs_f64() < limit_s as f64, format!("{:.1}s of {limit_s}s", elapsed.as_secs_f64()))
}

fn dimensional_fidelity() -> aprnet::Result<Outcome> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f32>::new();
    let ce = Encoder::new(&mut store, &mut rng, "content", EncoderKind::Content);
    let se = Encoder::new(&mut store, &mut rng, "style", EncoderKind::Style);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let c = tape.constant(Tensor::<f32>::rand_uniform(&[128, 384, 1], 0.0, 1.0, &mut rng).map(|v| v.round()));
    let s = tape.constant(Tensor::rand_uniform(&[128, 384, 3], 0.0, 1.0, &mut rng));
    let cb = ce.encode(&mut tape, &p, c)?;
    let sb = se.encode(&mut tape, &p, s)?;
    let want_stages = [[64, 192, 32], [32, 96, 64], [16, 48, 128], [16, 48, 256]];
    let mut mismatches = Vec::new();
    for (i, want) in want_stages.iter().enumerate() {
        for (bank, v) in [("content", cb.stages[i]), ("style", sb.stages[i])] {
            if tape.dims(v) != want {
                mismatches.push(format!("{bank} stage {} is {:?}", i + 1, tape.dims(v)));
            }
        }
    }
    let sam = build_sam_inputs(&mut tape, &cb, &sb)?;
    let cat = build_style_cat(&mut tape, &sb)?;
    let (h8, w8, _) = tape.value(cat).hwc();
    let mut pooled = Vec::new();
    for (ph, pw) in pyramid_sizes(h8, w8)? {
        let v = tape.avg_pool(cat, ph, pw)?;
        pooled.push(tape.dims(v).to_vec());
    }
    let checks: [(&str, Vec<usize>, Vec<usize>); 6] = [
        ("C_sam", tape.dims(sam.content).to_vec(), vec![64, 192, 736]),
        ("S_sam", tape.dims(sam.style).to_vec(), vec![64, 192, 480]),
        ("S_cat", tape.dims(cat).to_vec(), vec![16, 48, 480]),
        ("SPP 1", pooled[0].clone(), vec![4, 12, 480]),
        ("SPP 2", pooled[1].clone(), vec![2, 6, 480]),
        ("SPP 3", pooled[2].clone(), vec![1, 3, 480]),
    ];
    for (name, got, want) in checks {
        if got != want {
            mismatches.push(format!("{name} is {got:?}, want {want:?}"));
        }
    }
    let (fast, time) = within(t0.elapsed(), 10);
    let detail = if mismatches.is_empty() {
        format!("all stage, bank, S_cat and pyramid shapes exact; {time}")
    } else {
        format!("{}; {time}", mismatches.join(", "))
    };
    Ok(outcome(mismatches.is_empty() && fast, detail))
}

fn modconv_correctness() -> aprnet::Result<Outcome> {
    let t0 = Instant::now();
    let oracle = modconv_oracle_error(200, 1)?;
    let mut scale = 0.0f64;
    for alpha in [0.5, 2.0, 10.0] {
        scale = scale.max(modconv_scale_error(alpha, 100, 2)?);
    }
    let stds: Vec<f64> = demodulation_stds(3, 3)?.into_iter().flatten().collect();
    let (lo, hi) = stds.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let (fast, time) = within(t0.elapsed(), 60);
    let ok = oracle <= 1e-5 && scale <= 1e-5 && lo >= 0.9 && hi <= 1.1 && fast;
    Ok(outcome(
        ok,
        format!("oracle {oracle:.1e} on 200 instances, scale {scale:.1e}, channel std in [{lo:.3}, {hi:.3}]; {time}"),
    ))
}

fn attention_correctness() -> aprnet::Result<Outcome> {
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in 0..5 {
        let p = pixamp_oracle_check(seed)?;
        let m = musf_oracle_check(seed)?;
        ok &= p.max_error <= 1e-5 && m.max_error <= 1e-5;
        ok &= p.convexity_violations == 0 && m.convexity_violations == 0;
        ok &= p.weight_sum_error <= 1e-6 && m.weight_sum_error <= 1e-6;
        if seed == 0 {
            parts.push(format!("pixel sampling error {:.1e}, fusion error {:.1e}", p.max_error, m.max_error));
        }
        ok &= pixamp_single_candidate_exact(seed)?;
    }
    let g = SamplingGrid::new(5, 4)?;
    ok &= g.span() == 17 && g.candidates() == 25;
    parts.push(format!("k=1 exact, k=5 m=4 spans {}x{} with {} candidates", g.span(), g.span(), g.candidates()));
    Ok(outcome(ok, parts.join("; ")))
}

fn gradient_checks() -> Outcome {
    let t0 = Instant::now();
    let cfg = GradcheckConfig::default();
    let results = gradient_suite(&cfg);
    let worst = results
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} ({})", c.name, c.detail))
        .collect::<Vec<_>>();
    let (fast, time) = within(t0.elapsed(), 300);
    let detail = if worst.is_empty() {
        format!("{} paths within 1e-4; {time}", results.len())
    } else {
        format!("failed: {}; {time}", worst.join(", "))
    };
    outcome(worst.is_empty() && fast, detail)
}

fn single_crop_invariants() -> aprnet::Result<Outcome> {
    let failures = single_crop_multiset_failures(1000, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gt = Tensor::<f32>::rand_uniform(&[64, 96, 3], 0.0, 1.0, &mut rng);
    let (same, _) = single_crop(&gt, 16, ShufflePolicy::identity(), &mut rng)?;
    let identity = same.data().iter().zip(gt.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    let src = synthesize(&SynthConfig::new(128, 512), &mut rng);
    let cfg = TripletConfig::default();
    let mut deterministic = true;
    for seed in 0..3 {
        let a = make_triplet(&src, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let b = make_triplet(&src, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
        deterministic &= a == b;
    }
    Ok(outcome(
        failures == 0 && identity && deterministic,
        format!("{failures} multiset failures in 1000 runs, identity exact: {identity}, seed-deterministic: {deterministic}"),
    ))
}

fn overfit_set() -> aprnet::Result<Vec<Triplet>> {
    let cfg = DatagenConfig {
        triplet: TripletConfig::with_size(32, 96),
        synth_extra_width: 32,
        varying_background: true,
    };
    Ok(generate(&Source::Synthetic(8), &cfg, 7, 8)?.into_iter().map(|g| g.triplet).collect())
}

fn overfit(variant: Variant, data: &[Triplet]) -> aprnet::Result<(f64, f64, f64)> {
    let cfg = TrainConfig {
        render: RenderConfig::with_variant(variant),
        batch: 1,
        steps: 1000,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train(cfg, data, |_| {})?;
    let at10 = out.curve[9].content;
    // One epoch, so every triplet contributes once.
    let end = out.curve.iter().rev().take(data.len()).map(|l| l.content).sum::<f64>() / data.len() as f64;
    Ok((at10, end, evaluate(data, &out.model)?.mean_psnr))
}

fn toy_overfit() -> aprnet::Result<Outcome> {
    let t0 = Instant::now();
    let data = overfit_set()?;
    let (at10, end, apr_psnr) = overfit(Variant::Aprnet, &data)?;
    let (_, _, base_psnr) = overfit(Variant::Baseline, &data)?;
    let reduction = 1.0 - end / at10;
    let (fast, time) = within(t0.elapsed(), 1800);
    Ok(outcome(
        reduction >= 0.8 && apr_psnr >= 25.0 && base_psnr < apr_psnr && fast,
        format!(
            "content loss {at10:.4} -> {end:.4} ({:.1}% lower), PSNR {apr_psnr:.2} dB vs baseline {base_psnr:.2} dB; {time}",
            100.0 * reduction
        ),
    ))
}

fn metrics_sanity() -> aprnet::Result<Outcome> {
    let a = Tensor::from_fn(16, 20, 3, |y, x, c| (0.5 + 0.4 * (0.37 * y as f64 + 0.23 * x as f64 + 0.9 * c as f64).sin()) as f32);
    let b = Tensor::from_fn(16, 20, 3, |y, x, c| {
        (a.at(y, x, c) + (0.05 * (0.5 * y as f64 - 0.31 * x as f64 + c as f64).cos()) as f32).clamp(0.0, 1.0)
    });
    let neg = a.map(|v| 1.0 - v);
    let mut ok = psnr(&a, &a)? == 100.0
        && psnr(&Tensor::zeros(&[8, 8, 3]), &Tensor::full(&[8, 8, 3], 1.0))? == 0.0
        && ssim(&a, &a)? == 1.0
        && ssim(&a, &neg)? < 1.0;
    // Values computed independently with numpy.
    ok &= (psnr(&a, &b)? - 29.030519518835835).abs() < 1e-9;
    ok &= (ssim(&a, &b)? - 0.9842370471223846).abs() < 1e-9;
    ok &= psnr(&a, &b)? == psnr(&b, &a)? && ssim(&a, &b)? == ssim(&b, &a)?;
    let set: Vec<Triplet> = (0..3)
        .map(|i| Triplet {
            content: Tensor::zeros(&[16, 20, 1]),
            style: a.clone(),
            ground_truth: a.map(|v| (v + 0.1 * i as f32).min(1.0)),
        })
        .collect();
    let r = evaluate(&set, &IdentityOracle)?;
    ok &= r.mean_psnr == 100.0 && r.mean_ssim == 1.0;
    Ok(outcome(ok, format!("trivial and fixture values exact; identity renderer scores PSNR {} / SSIM {}", r.mean_psnr, r.mean_ssim)))
}

type Criterion = Box<dyn Fn() -> aprnet::Result<Outcome>>;

fn main() -> ExitCode {
    let skip_slow = std::env::var_os("APRNET_SKIP_OVERFIT").is_some();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("dimensional fidelity", Box::new(dimensional_fidelity)),
        ("ModConv correctness", Box::new(modconv_correctness)),
        ("attention correctness", Box::new(attention_correctness)),
        ("gradient suite", Box::new(|| Ok(gradient_checks()))),
        ("Single Crop invariants", Box::new(single_crop_invariants)),
        ("toy overfit", Box::new(toy_overfit)),
        ("metrics sanity", Box::new(metrics_sanity)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if skip_slow && i == 5 {
            println!("criterion {}: SKIP  {name}: APRNET_SKIP_OVERFIT is set", i + 1);
            continue;
        }
        let o = run().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        println!("criterion {}: {verdict}  {name}: {}", i + 1, o.detail);
        failed += !o.passed as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
