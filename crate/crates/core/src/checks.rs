//! Oracle comparisons, invariant probes and the gradient-check suite.
//!
//! The functions here measure; callers decide thresholds. The `selftest` and
//! `gradcheck` subcommands print the results of [`selftest`] and
//! [`gradient_suite`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{gradcheck, GradReport, GradcheckConfig, Tape, Var};
use crate::data::{single_crop, ShufflePolicy};
use crate::encoders::STAGE_CHANNELS;
use crate::error::Result;
use crate::metrics::{evaluate, psnr, ssim, IdentityOracle};
use crate::musf::{build_pyramid, fuse, fuse_tensors, LayerStyle, StyleContext, StyleMode};
use crate::ops::{self, Padding};
use crate::params::{Bound, ParamStore};
use crate::pixamp::{sample_attention, sample_attention_tensors, AttnPixamp, SamInputs, SamplingGrid};
use crate::pixymod::{modconv, modconv_forward, PixyModStack, DEFAULT_EPS};
use crate::reference;
use crate::tensor::{ConvWeight, Tensor};
use crate::training::{
    content_loss, discriminator_loss, generator_adversarial_loss, perceptual_loss, Discriminator, PerceptualNet,
};

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self::new(name, value <= limit, format!("max error {value:.2e} (limit {limit:.0e})"))
    }

    fn from_report(name: &str, report: Result<GradReport>) -> Self {
        match report {
            Ok(r) => Self::new(
                name,
                r.passed(),
                format!("max rel error {:.2e} over {} leaves", r.max_rel_error, r.leaves.len()),
            ),
            Err(e) => Self::new(name, false, e.to_string()),
        }
    }
}

/// Aligned `PASS`/`FAIL` table.
pub fn format_checks(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    checks
        .iter()
        .map(|c| {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            format!("{verdict}  {:<width$}  {}\n", c.name, c.detail)
        })
        .collect()
}

/// `|a - b| / (1 + |b|)`, maximized over elements.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "compared slices differ in length");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (1.0 + y.abs()))
        .fold(0.0, f64::max)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(dims: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::rand_uniform(dims, -1.0, 1.0, r)
}

fn random_weight(o: usize, kh: usize, kw: usize, i: usize, r: &mut ChaCha8Rng) -> ConvWeight<f64> {
    ConvWeight::from_tensor(uniform(&[o, kh, kw, i], r)).expect("rank-4 weight")
}

/// Worst error of the im2col convolution against the loop oracle.
pub fn conv_oracle_error(instances: usize, seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (h, w, c) = (r.random_range(1..=7), r.random_range(1..=7), r.random_range(1..=4));
        let (o, k, stride) = (r.random_range(1..=3), r.random_range(1..=3), r.random_range(1..=2));
        let padding = if k <= h.min(w) && r.random_bool(0.5) { Padding::Valid } else { Padding::Same };
        let x = uniform(&[h, w, c], &mut r);
        let wt = random_weight(o, k, k, c, &mut r);
        let fast = ops::conv2d(&x, &wt, stride, padding)?;
        let slow = reference::conv2d(&x, &wt, stride, padding);
        if fast.dims() != slow.dims() {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(rel_error(fast.data(), slow.data()));
    }
    Ok(worst)
}

/// Worst error of the stabilized softmax against the direct formula.
pub fn softmax_oracle_error(instances: usize, seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = r.random_range(1..=10);
        let logits: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        worst = worst.max(rel_error(&ops::softmax(&logits)?, &reference::softmax(&logits)));
    }
    Ok(worst)
}

/// Worst error of bilinear resizing against the per-pixel oracle.
pub fn resize_oracle_error(instances: usize, seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let x = uniform(&[r.random_range(1..=8), r.random_range(1..=8), r.random_range(1..=3)], &mut r);
        let (oh, ow) = (r.random_range(1..=12), r.random_range(1..=12));
        let fast = ops::resize_bilinear(&x, oh, ow)?;
        worst = worst.max(rel_error(fast.data(), reference::resize_bilinear(&x, oh, ow).data()));
    }
    Ok(worst)
}

/// Worst error of adaptive average pooling against the per-bin oracle.
pub fn pool_oracle_error(instances: usize, seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (h, w) = (r.random_range(1..=12), r.random_range(1..=12));
        let x = uniform(&[h, w, r.random_range(1..=3)], &mut r);
        let (oh, ow) = (r.random_range(1..=h), r.random_range(1..=w));
        let fast = ops::avg_pool_to(&x, oh, ow)?;
        worst = worst.max(rel_error(fast.data(), reference::avg_pool_to(&x, oh, ow).data()));
    }
    Ok(worst)
}

fn modconv_instance(r: &mut ChaCha8Rng) -> (Tensor<f64>, Tensor<f64>, ConvWeight<f64>) {
    let (h, w) = (r.random_range(1..=8), r.random_range(1..=8));
    let (i, o) = (r.random_range(1..=4), r.random_range(1..=4));
    let k = if r.random_bool(0.5) { 3 } else { 1 };
    let c = uniform(&[h, w, i], r);
    let s = Tensor::rand_uniform(&[h, w, i], -2.0, 2.0, r);
    (c, s, random_weight(o, k, k, i, r))
}

/// Worst error of the vectorized modulated convolution against the per-element loop.
pub fn modconv_oracle_error(instances: usize, seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (c, s, w) = modconv_instance(&mut r);
        let fast = modconv_forward(&c, &s, &w, DEFAULT_EPS)?;
        worst = worst.max(rel_error(fast.data(), reference::modconv(&c, &s, &w, DEFAULT_EPS).data()));
    }
    Ok(worst)
}

/// Worst change of the modulated convolution when the style is scaled by `alpha`.
pub fn modconv_scale_error(alpha: f64, instances: usize, seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    // Magnitudes are kept away from zero so that eps stays negligible next to
    // the demodulation variance; near-zero styles are where the guard, by
    // design, breaks homogeneity.
    fn away(dims: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Result<Tensor<f64>> {
        let n = dims.iter().product();
        let data = (0..n)
            .map(|_| {
                let v = r.random_range(lo..hi);
                if r.random_bool(0.5) { v } else { -v }
            })
            .collect();
        Tensor::new(dims, data)
    }
    for _ in 0..instances {
        let (c, s, w) = modconv_instance(&mut r);
        let s = away(s.dims(), 0.5, 2.0, &mut r)?;
        let w = ConvWeight::from_tensor(away(w.tensor().dims(), 0.1, 1.0, &mut r)?)?;
        let base = modconv_forward(&c, &s, &w, DEFAULT_EPS)?;
        let scaled = modconv_forward(&c, &s.map(|v| v * alpha), &w, DEFAULT_EPS)?;
        worst = worst.max(rel_error(scaled.data(), base.data()));
    }
    Ok(worst)
}

/// Per-output-channel standard deviations of the modulated convolution on
/// 100x100 i.i.d. standard normal content, one row per random style draw.
pub fn demodulation_stds(draws: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut r = rng(seed);
    let (n, i, o) = (100, 4, 4);
    (0..draws)
        .map(|_| {
            let c = Tensor::<f64>::randn(&[n, n, i], 1.0, &mut r);
            let s = Tensor::<f64>::randn(&[n, n, i], 1.0, &mut r);
            let w = ConvWeight::from_tensor(Tensor::randn(&[o, 3, 3, i], 1.0, &mut r))?;
            let out = modconv_forward(&c, &s, &w, DEFAULT_EPS)?;
            Ok((0..o)
                .map(|ch| {
                    let vals: Vec<f64> = out.data().iter().skip(ch).step_by(o).copied().collect();
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt()
                })
                .collect())
        })
        .collect()
}

/// Results of comparing an attention module against its formula oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionCheck {
    /// Worst relative error of outputs and weights.
    pub max_error: f64,
    /// Coordinates/channels falling outside the candidates' range.
    pub convexity_violations: usize,
    /// Worst `|sum(weights) - 1|`.
    pub weight_sum_error: f64,
}

fn convexity_violation(out: f64, cands: impl Iterator<Item = f64>) -> bool {
    let (lo, hi) = cands.fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(v), b.max(v)));
    let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    out < lo - slack || out > hi + slack
}

/// Pixel-sampling attention against the per-coordinate formula for several grids.
pub fn pixamp_oracle_check(seed: u64) -> Result<AttentionCheck> {
    let mut r = rng(seed);
    let mut res = AttentionCheck {
        max_error: 0.0,
        convexity_violations: 0,
        weight_sum_error: 0.0,
    };
    for (k, m) in [(2, 1), (3, 2), (5, 4), (4, 1)] {
        let grid = SamplingGrid::new(k, m)?;
        let (h, w, d) = (r.random_range(4..=9), r.random_range(4..=9), r.random_range(1..=6));
        let q = Tensor::rand_uniform(&[h, w, d], -2.0, 2.0, &mut r);
        let kt = Tensor::rand_uniform(&[h, w, d], -2.0, 2.0, &mut r);
        let v = uniform(&[h, w, 3], &mut r);
        let (out, wts) = sample_attention_tensors(&q, &kt, &v, grid)?;
        let offsets = grid.offsets();
        for y in 0..h {
            for x in 0..w {
                let (o_ref, w_ref) = reference::sample_attention_at(&q, &kt, &v, &offsets, y, x);
                res.max_error = res.max_error.max(rel_error(out.pixel(y, x), &o_ref));
                res.max_error = res.max_error.max(rel_error(wts.pixel(y, x), &w_ref));
                res.weight_sum_error = res.weight_sum_error.max((wts.pixel(y, x).iter().sum::<f64>() - 1.0).abs());
                for ch in 0..3 {
                    let cands = offsets.iter().map(|&(dy, dx)| {
                        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        v.at(yy, xx, ch)
                    });
                    res.convexity_violations += convexity_violation(out.at(y, x, ch), cands) as usize;
                }
            }
        }
    }
    Ok(res)
}

/// With a single candidate the sampled image must equal the style image bit for bit.
pub fn pixamp_single_candidate_exact(seed: u64) -> Result<bool> {
    let mut r = rng(seed);
    let q = uniform(&[6, 7, 4], &mut r);
    let k = uniform(&[6, 7, 4], &mut r);
    let v = uniform(&[6, 7, 3], &mut r);
    let (out, _) = sample_attention_tensors(&q, &k, &v, SamplingGrid::new(1, 4)?)?;
    Ok(out == v)
}

/// Multi-scale fusion against the per-coordinate formula.
pub fn musf_oracle_check(seed: u64) -> Result<AttentionCheck> {
    let mut r = rng(seed);
    let mut res = AttentionCheck {
        max_error: 0.0,
        convexity_violations: 0,
        weight_sum_error: 0.0,
    };
    for cell in [1, 2, 8] {
        let (h8, w8, d, vc) = (4, r.random_range(4..=7), r.random_range(1..=6), r.random_range(1..=5));
        let q = Tensor::rand_uniform(&[h8 * cell, w8 * cell, d], -2.0, 2.0, &mut r);
        let keys: [Tensor<f64>; 4] = std::array::from_fn(|_| Tensor::rand_uniform(&[h8, w8, d], -2.0, 2.0, &mut r));
        let values: [Tensor<f64>; 4] = std::array::from_fn(|_| uniform(&[h8, w8, vc], &mut r));
        let (out, wts) = fuse_tensors(&q, keys.each_ref(), values.each_ref())?;
        for j in 0..h8 * cell {
            for k in 0..w8 * cell {
                let (o_ref, w_ref) = reference::fuse_at(&q, &keys, &values, cell, j, k);
                res.max_error = res.max_error.max(rel_error(out.pixel(j, k), &o_ref));
                res.max_error = res.max_error.max(rel_error(wts.pixel(j, k), &w_ref));
                res.weight_sum_error = res.weight_sum_error.max((wts.pixel(j, k).iter().sum::<f64>() - 1.0).abs());
                for ch in 0..vc {
                    let cands = values.iter().map(|v| v.at(j / cell, k / cell, ch));
                    res.convexity_violations += convexity_violation(out.at(j, k, ch), cands) as usize;
                }
            }
        }
    }
    Ok(res)
}

/// Canonical byte form of a patch: the smallest of its four rotations.
fn canonical_patch(img: &Tensor<f32>, row: usize, col: usize, p: usize) -> Vec<u32> {
    let c = img.c();
    (0..4u8)
        .map(|turns| {
            let mut v = Vec::with_capacity(p * p * c);
            for y in 0..p {
                for x in 0..p {
                    let (sy, sx) = crate::data::crop::rotated_source(y, x, p, turns);
                    for ch in 0..c {
                        v.push(img.at(row * p + sy, col * p + sx, ch).to_bits());
                    }
                }
            }
            v
        })
        .min()
        .expect("four rotations")
}

fn patch_multiset(img: &Tensor<f32>, p: usize) -> Vec<Vec<u32>> {
    let mut all: Vec<Vec<u32>> = (0..img.h() / p)
        .flat_map(|r| (0..img.w() / p).map(move |c| (r, c)))
        .map(|(r, c)| canonical_patch(img, r, c, p))
        .collect();
    all.sort();
    all
}

/// Whether the patches of `a` and `b`, each taken up to rotation, form the same multiset.
pub fn same_patch_multiset(a: &Tensor<f32>, b: &Tensor<f32>, p: usize) -> bool {
    a.dims() == b.dims() && patch_multiset(a, p) == patch_multiset(b, p)
}

/// Counts runs of the default shuffle that break the patch multiset.
pub fn single_crop_multiset_failures(runs: usize, seed: u64) -> Result<usize> {
    let mut failures = 0;
    for run in 0..runs {
        let mut r = rng(seed.wrapping_add(run as u64));
        let (rows, cols) = (r.random_range(1..=3), r.random_range(1..=4));
        let img = Tensor::<f32>::rand_uniform(&[rows * 16, cols * 16, 3], 0.0, 1.0, &mut r);
        let (out, _) = single_crop(&img, 16, ShufflePolicy::default(), &mut r)?;
        failures += !same_patch_multiset(&img, &out, 16) as usize;
    }
    Ok(failures)
}

/// Wraps a scalar-valued view of `v` with fixed random weights.
fn probe(tape: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let dims = tape.dims(v).to_vec();
    let r = tape.constant(uniform(&dims, &mut rng(seed)));
    let m = tape.mul(v, r)?;
    Ok(tape.sum(m))
}

fn with_params<F>(inputs: Vec<Tensor<f64>>, store: &ParamStore<f64>, cfg: &GradcheckConfig, build: F) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var], &Bound) -> Result<Var>,
{
    let n = inputs.len();
    let mut leaves = inputs;
    leaves.extend(store.values().iter().cloned());
    gradcheck(
        |tape, vars| {
            let p = Bound::from_vars(vars[n..].to_vec());
            build(tape, &vars[..n], &p)
        },
        &leaves,
        cfg,
    )
}

type GradCase = (&'static str, fn(&GradcheckConfig) -> Result<GradReport>);

fn grad_conv(cfg: &GradcheckConfig) -> Result<GradReport> {
    let mut r = rng(11);
    let leaves = [uniform(&[5, 6, 3], &mut r), uniform(&[4, 3, 3, 3], &mut r), uniform(&[7, 6, 2], &mut r), uniform(&[3, 2, 2, 2], &mut r)];
    gradcheck(
        |t, v| {
            let a = t.conv2d(v[0], v[1], 1, Padding::Same)?;
            let b = t.conv2d(v[2], v[3], 2, Padding::Same)?;
            let c = t.conv2d(v[2], v[3], 1, Padding::Valid)?;
            let (pa, pb, pc) = (probe(t, a, 1)?, probe(t, b, 2)?, probe(t, c, 3)?);
            let s = t.add(pa, pb)?;
            t.add(s, pc)
        },
        &leaves,
        cfg,
    )
}

fn grad_elementwise(cfg: &GradcheckConfig) -> Result<GradReport> {
    let mut r = rng(12);
    let leaves = [uniform(&[3, 4, 2], &mut r), uniform(&[3, 4, 2], &mut r), uniform(&[2], &mut r)];
    gradcheck(
        |t, v| {
            let m = t.mul(v[0], v[1])?;
            let l = t.leaky_relu(m, 0.2);
            let sq = t.square(v[1]);
            let den = t.add_scalar(sq, 1.0);
            let den = t.sqrt(den);
            let q = t.div(l, den)?;
            let sp = t.softplus(q);
            let a = t.abs(v[0]);
            let d = t.sub(sp, a)?;
            let b = t.add_channel_bias(d, v[2])?;
            let s = t.scale(b, 1.5);
            let mean = t.mean(s);
            let p = probe(t, s, 4)?;
            t.add(p, mean)
        },
        &leaves,
        cfg,
    )
}

fn grad_softmax(cfg: &GradcheckConfig) -> Result<GradReport> {
    let leaves = [Tensor::rand_uniform(&[3, 3, 5], -2.0, 2.0, &mut rng(13))];
    gradcheck(
        |t, v| {
            let s = t.softmax_channels(v[0])?;
            probe(t, s, 5)
        },
        &leaves,
        cfg,
    )
}

fn grad_resample(cfg: &GradcheckConfig) -> Result<GradReport> {
    let mut r = rng(14);
    let leaves = [uniform(&[3, 4, 2], &mut r), uniform(&[7, 9, 2], &mut r), uniform(&[7, 9, 3], &mut r)];
    gradcheck(
        |t, v| {
            let up = t.resize(v[0], 5, 7)?;
            let down = t.resize(v[1], 3, 5)?;
            let pool = t.avg_pool(v[1], 3, 4)?;
            let cat = t.concat(&[v[1], v[2]])?;
            let parts = [probe(t, up, 6)?, probe(t, down, 7)?, probe(t, pool, 8)?, probe(t, cat, 9)?];
            let mut acc = parts[0];
            for &p in &parts[1..] {
                acc = t.add(acc, p)?;
            }
            Ok(acc)
        },
        &leaves,
        cfg,
    )
}

fn grad_modconv(cfg: &GradcheckConfig) -> Result<GradReport> {
    let mut r = rng(15);
    let target = uniform(&[4, 4, 3], &mut r);
    let leaves = [uniform(&[4, 4, 2], &mut r), Tensor::rand_uniform(&[4, 4, 2], 0.2, 1.5, &mut r), uniform(&[3, 3, 3, 2], &mut r)];
    gradcheck(
        |t, v| {
            let n = modconv(t, v[0], v[1], v[2], DEFAULT_EPS)?;
            let g = t.constant(target.clone());
            content_loss(t, n, g)
        },
        &leaves,
        cfg,
    )
}

fn grad_pixymod_stack(cfg: &GradcheckConfig) -> Result<GradReport> {
    let mut r = rng(16);
    let mut store = ParamStore::<f64>::new();
    let stack = PixyModStack::new(&mut store, &mut r, "pm", 3, &[4, 2], DEFAULT_EPS);
    for v in store.values_mut() {
        // Non-zero biases so every path carries gradient.
        if v.rank() == 1 {
            *v = uniform(v.dims(), &mut r);
        }
    }
    let target = uniform(&[4, 4, 3], &mut r);
    let inputs = vec![
        uniform(&[4, 4, 3], &mut r),
        Tensor::rand_uniform(&[4, 4, 3], 0.2, 1.5, &mut r),
        Tensor::rand_uniform(&[4, 4, 4], 0.2, 1.5, &mut r),
        Tensor::rand_uniform(&[4, 4, 2], 0.2, 1.5, &mut r),
    ];
    with_params(inputs, &store, cfg, |t, v, p| {
        let out = stack.render(t, p, v[0], &v[1..4])?;
        let g = t.constant(target.clone());
        content_loss(t, out, g)
    })
}

fn grad_sampling_attention(cfg: &GradcheckConfig) -> Result<GradReport> {
    let mut r = rng(17);
    let leaves = [uniform(&[5, 6, 3], &mut r), uniform(&[5, 6, 3], &mut r), uniform(&[5, 6, 3], &mut r)];
    gradcheck(
        |t, v| {
            let a = sample_attention(t, v[0], v[1], v[2], SamplingGrid::new(3, 2)?)?;
            let b = sample_attention(t, v[0], v[1], v[2], SamplingGrid::new(2, 1)?)?;
            let (pa, pb) = (probe(t, a, 10)?, probe(t, b, 11)?);
            t.add(pa, pb)
        },
        &leaves,
        cfg,
    )
}

fn grad_pixamp_module(cfg: &GradcheckConfig) -> Result<GradReport> {
    let mut r = rng(18);
    let mut store = ParamStore::<f64>::new();
    let module = AttnPixamp::new(&mut store, &mut r, "sam", SamplingGrid::new(3, 1)?, 4);
    let inputs = vec![uniform(&[4, 4, 736], &mut r), uniform(&[4, 4, 480], &mut r), uniform(&[4, 4, 3], &mut r)];
    with_params(inputs, &store, cfg, |t, v, p| {
        let out = module.render(
            t,
            p,
            &SamInputs {
                content: v[0],
                style: v[1],
                style_image: v[2],
            },
        )?;
        probe(t, out, 12)
    })
}

fn grad_fusion(cfg: &GradcheckConfig) -> Result<GradReport> {
    let mut r = rng(19);
    let leaves = [uniform(&[8, 12, 3], &mut r), uniform(&[4, 6, 3], &mut r), uniform(&[4, 6, 2], &mut r)];
    gradcheck(
        |t, v| {
            let keys = build_pyramid(t, v[1])?;
            let values = build_pyramid(t, v[2])?;
            let (out, _) = fuse(t, v[0], keys, values)?;
            probe(t, out, 13)
        },
        &leaves,
        cfg,
    )
}

fn grad_style_builders(cfg: &GradcheckConfig) -> Result<GradReport> {
    let mut r = rng(20);
    let mut store = ParamStore::<f64>::new();
    let content_widths = [32, 64, 128, 256, 256];
    let first = LayerStyle::new(&mut store, &mut r, "l1", StyleMode::Attention, 3, None, &content_widths, 4);
    let later = LayerStyle::new(&mut store, &mut r, "l2", StyleMode::Attention, 2, Some(3), &content_widths, 4);
    let concat = LayerStyle::new(&mut store, &mut r, "l3", StyleMode::Concat, 2, None, &content_widths, 4);
    let global = LayerStyle::new(&mut store, &mut r, "l4", StyleMode::Global, 2, None, &content_widths, 4);
    let mut inputs: Vec<Tensor<f64>> = vec![uniform(&[8, 8, 3], &mut r)];
    let style_sizes = [(8, 8), (4, 4), (4, 4), (4, 4)];
    for (&c, (h, w)) in STAGE_CHANNELS.iter().zip(style_sizes) {
        inputs.push(uniform(&[h, w, c], &mut r));
    }
    let content_sizes = [(4, 4), (2, 2), (1, 1), (1, 1), (8, 8)];
    for (&c, (h, w)) in content_widths.iter().zip(content_sizes) {
        inputs.push(uniform(&[h, w, c], &mut r));
    }
    with_params(inputs, &store, cfg, |t, v, p| {
        let resized = v[1..5].iter().map(|&s| t.resize(s, 4, 4)).collect::<Result<Vec<_>>>()?;
        let ctx = StyleContext {
            style_stages: [v[1], v[2], v[3], v[4]],
            style_cat: t.concat(&resized)?,
            content_maps: v[5..10].to_vec(),
        };
        let mut acc: Option<Var> = None;
        for (i, (style, input)) in [(&first, v[0]), (&later, v[0]), (&concat, v[0]), (&global, v[0])].into_iter().enumerate() {
            let out = style.build(t, p, &ctx, (8, 8), input)?;
            let pr = probe(t, out.style, 20 + i as u64)?;
            acc = Some(match acc {
                Some(a) => t.add(a, pr)?,
                None => pr,
            });
        }
        Ok(acc.expect("four builders"))
    })
}

fn grad_content_loss(cfg: &GradcheckConfig) -> Result<GradReport> {
    let mut r = rng(21);
    let leaves = [uniform(&[4, 5, 3], &mut r), uniform(&[4, 5, 3], &mut r)];
    gradcheck(|t, v| content_loss(t, v[0], v[1]), &leaves, cfg)
}

fn grad_perceptual_loss(cfg: &GradcheckConfig) -> Result<GradReport> {
    let mut r = rng(22);
    let net = PerceptualNet::<f64>::new(3);
    let leaves = [uniform(&[16, 16, 3], &mut r), uniform(&[16, 16, 3], &mut r)];
    gradcheck(|t, v| perceptual_loss(t, &net, v[0], v[1]), &leaves, cfg)
}

fn discriminator_setup(seed: u64) -> (ParamStore<f64>, Discriminator, ChaCha8Rng) {
    let mut r = rng(seed);
    let mut store = ParamStore::<f64>::new();
    let d = Discriminator::new(&mut store, &mut r);
    for v in store.values_mut() {
        if v.rank() == 1 {
            *v = uniform(v.dims(), &mut r).map(|x| 0.1 * x);
        }
    }
    (store, d, r)
}

fn grad_generator_adversarial(cfg: &GradcheckConfig) -> Result<GradReport> {
    let (store, d, mut r) = discriminator_setup(23);
    let inputs = vec![uniform(&[8, 8, 3], &mut r)];
    with_params(inputs, &store, cfg, |t, v, p| generator_adversarial_loss(t, &d, p, v[0]))
}

fn grad_discriminator_loss(cfg: &GradcheckConfig) -> Result<GradReport> {
    let (store, d, mut r) = discriminator_setup(24);
    let inputs = vec![uniform(&[8, 8, 3], &mut r), uniform(&[8, 8, 3], &mut r)];
    with_params(inputs, &store, cfg, |t, v, p| discriminator_loss(t, &d, p, v[0], v[1]))
}

/// Every differentiable path, by name.
pub fn gradient_cases() -> Vec<GradCase> {
    vec![
        ("conv2d", grad_conv),
        ("elementwise", grad_elementwise),
        ("softmax", grad_softmax),
        ("resize/pool/concat", grad_resample),
        ("modconv", grad_modconv),
        ("pixymod stack", grad_pixymod_stack),
        ("sampling attention", grad_sampling_attention),
        ("pixel sampling module", grad_pixamp_module),
        ("multi-scale fusion", grad_fusion),
        ("style builders", grad_style_builders),
        ("content loss", grad_content_loss),
        ("perceptual loss", grad_perceptual_loss),
        ("generator adversarial loss", grad_generator_adversarial),
        ("discriminator loss", grad_discriminator_loss),
    ]
}

pub fn gradient_suite(cfg: &GradcheckConfig) -> Vec<Check> {
    gradient_cases()
        .into_iter()
        .map(|(name, case)| Check::from_report(name, case(cfg)))
        .collect()
}

fn metric_checks() -> Result<Vec<Check>> {
    let a = Tensor::from_fn(16, 24, 3, |y, x, c| ((y * 24 + x) * 3 + c) as f32 / 1152.0);
    let zero = Tensor::zeros(&[16, 24, 3]);
    let one = Tensor::full(&[16, 24, 3], 1.0);
    let triplets: Vec<crate::data::Triplet> = (0..3)
        .map(|i| crate::data::Triplet {
            content: Tensor::zeros(&[16, 24, 1]),
            style: a.clone(),
            ground_truth: a.map(|v| (v + i as f32 * 0.1).min(1.0)),
        })
        .collect();
    let report = evaluate(&triplets, &IdentityOracle)?;
    Ok(vec![
        Check::new("psnr identical", psnr(&a, &a)? == 100.0, "100 dB cap"),
        Check::new("psnr zero vs one", psnr(&zero, &one)? == 0.0, "0 dB"),
        Check::new("ssim identical", ssim(&a, &a)? == 1.0, "exactly 1"),
        Check::new(
            "evaluate identity",
            report.mean_psnr == 100.0 && report.mean_ssim == 1.0,
            format!("PSNR {} SSIM {}", report.mean_psnr, report.mean_ssim),
        ),
    ])
}

/// Oracle and invariant checks; quick enough to run on every invocation.
pub fn selftest(seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    let mut push = |name: &str, r: Result<Check>| {
        out.push(r.unwrap_or_else(|e| Check::new(name, false, e.to_string())));
    };
    push("conv2d oracle", conv_oracle_error(100, seed).map(|e| Check::at_most("conv2d oracle", e, 1e-6)));
    push("softmax oracle", softmax_oracle_error(100, seed).map(|e| Check::at_most("softmax oracle", e, 1e-6)));
    push("resize oracle", resize_oracle_error(100, seed).map(|e| Check::at_most("resize oracle", e, 1e-6)));
    push("pool oracle", pool_oracle_error(100, seed).map(|e| Check::at_most("pool oracle", e, 1e-6)));
    push("modconv oracle", modconv_oracle_error(100, seed).map(|e| Check::at_most("modconv oracle", e, 1e-5)));
    for alpha in [0.5, 2.0, 10.0] {
        let name = format!("modconv style scale x{alpha}");
        push(&name, modconv_scale_error(alpha, 50, seed).map(|e| Check::at_most(&name, e, 1e-5)));
    }
    push(
        "demodulation std",
        demodulation_stds(5, seed).map(|rows| {
            let all: Vec<f64> = rows.into_iter().flatten().collect();
            let (lo, hi) = all.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            Check::new("demodulation std", lo >= 0.9 && hi <= 1.1, format!("range [{lo:.4}, {hi:.4}]"))
        }),
    );
    for (name, res) in [("pixel sampling oracle", pixamp_oracle_check(seed)), ("fusion oracle", musf_oracle_check(seed))] {
        push(
            name,
            res.map(|c| {
                Check::new(
                    name,
                    c.max_error <= 1e-5 && c.convexity_violations == 0 && c.weight_sum_error <= 1e-6,
                    format!("max error {:.2e}, {} convexity violations", c.max_error, c.convexity_violations),
                )
            }),
        );
    }
    push(
        "single candidate is exact",
        pixamp_single_candidate_exact(seed).map(|ok| Check::new("single candidate is exact", ok, "k = 1")),
    );
    push(
        "default grid",
        Ok({
            let g = SamplingGrid::default();
            Check::new("default grid", g.span() == 17 && g.candidates() == 25, format!("span {} with {} candidates", g.span(), g.candidates()))
        }),
    );
    push(
        "patch multiset",
        single_crop_multiset_failures(100, seed).map(|f| Check::new("patch multiset", f == 0, format!("{f} failures in 100 runs"))),
    );
    match metric_checks() {
        Ok(cs) => out.extend(cs),
        Err(e) => out.push(Check::new("metrics", false, e.to_string())),
    }
    out
}
