//! Procedural text-line images: dark polylines over smooth backgrounds.

use rand::Rng;

use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub min_strokes: usize,
    pub max_strokes: usize,
    /// Linear colour ramp plus a faint ripple; otherwise one flat colour.
    pub varying_background: bool,
}

impl SynthConfig {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            min_strokes: 3,
            max_strokes: 6,
            varying_background: true,
        }
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::new(128, 512)
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

fn random_color<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> [f64; 3] {
    [0; 3].map(|_| rng.random_range(lo..hi))
}

/// One `(height, width, 3)` image in `[0, 1]`.
pub fn synthesize<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Tensor<f32> {
    let (h, w) = (cfg.height, cfg.width);
    let c0 = random_color(rng, 0.45, 1.0);
    let c1 = if cfg.varying_background { random_color(rng, 0.45, 1.0) } else { c0 };
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ux, uy) = (angle.cos(), angle.sin());
    let ripple_amp = if cfg.varying_background { rng.random_range(0.0..0.04) } else { 0.0 };
    let ripple_freq: f64 = rng.random_range(0.02..0.08);
    let ink = random_color(rng, 0.0, 0.3);

    // Ramp parameter normalised over the image extent along the direction.
    let corners = [(0.0, 0.0), (w as f64, 0.0), (0.0, h as f64), (w as f64, h as f64)];
    let proj: Vec<f64> = corners.iter().map(|&(x, y)| x * ux + y * uy).collect();
    let (pmin, pmax) = proj.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));

    let scale = h as f64 / 32.0;
    let n_strokes = rng.random_range(cfg.min_strokes..=cfg.max_strokes.max(cfg.min_strokes));
    let mut segments = Vec::new();
    for _ in 0..n_strokes {
        let radius = rng.random_range(0.8..1.8) * scale;
        let vertices = rng.random_range(2..=4);
        let mut prev = (rng.random_range(0.1..0.9) * w as f64, rng.random_range(0.2..0.8) * h as f64);
        for _ in 1..vertices {
            let next = (
                (prev.0 + rng.random_range(-0.6..0.6) * h as f64).clamp(0.0, w as f64),
                rng.random_range(0.15..0.85) * h as f64,
            );
            segments.push((prev, next, radius));
            prev = next;
        }
    }

    Tensor::from_fn(h, w, 3, |y, x, ch| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let t = ((px * ux + py * uy - pmin) / (pmax - pmin)).clamp(0.0, 1.0);
        let ripple = ripple_amp * (ripple_freq * (px + 0.7 * py)).sin();
        let bg = (c0[ch] * (1.0 - t) + c1[ch] * t + ripple).clamp(0.0, 1.0);
        let coverage = segments
            .iter()
            .map(|&(a, b, r)| (r + 0.5 - segment_distance((px, py), a, b)).clamp(0.0, 1.0))
            .fold(0.0, f64::max);
        (bg * (1.0 - coverage) + ink[ch] * coverage) as f32
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn seeded_images_repeat() {
        let cfg = SynthConfig::new(32, 96);
        let a = synthesize(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        let b = synthesize(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!(a.dims(), &[32, 96, 3]);
        assert!(a.min_value() >= 0.0 && a.max_value() <= 1.0);
    }

    #[test]
    fn strokes_are_darker_than_background() {
        let cfg = SynthConfig::new(32, 96);
        let img = synthesize(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(img.min_value() < 0.35);
        assert!(img.max_value() > 0.45);
    }
}
