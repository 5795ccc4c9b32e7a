//! Image I/O, binarization, thinning and Single Crop.

use std::path::Path;

use aprnet::data::{
    binarize_adaptive, datagen, generate, grayscale, load_dataset, load_png, make_triplet, save_png, single_crop,
    skeletonize, synthesize, DatagenConfig, Mask, ShufflePolicy, Source, SynthConfig, TripletConfig,
};
use aprnet::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn two_by_two_fixture_bytes() {
    let img = load_png(&fixture("rgb2x2.png")).unwrap();
    assert_eq!(img.dims(), &[2, 2, 3]);
    let bytes: Vec<u8> = img.data().iter().map(|v| (v * 255.0).round() as u8).collect();
    assert_eq!(bytes, [255, 0, 0, 0, 128, 255, 10, 20, 30, 255, 255, 255]);
}

#[test]
fn save_then_load_is_within_one_level() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let img = Tensor::<f32>::rand_uniform(&[7, 5, 3], 0.0, 1.0, &mut rng);
    let path = dir.path().join("x.png");
    save_png(&path, &img).unwrap();
    assert!(load_png(&path).unwrap().max_abs_diff(&img) <= 1.0 / 255.0);

    save_png(&path, &Tensor::zeros(&[1, 1, 3])).unwrap();
    assert_eq!(load_png(&path).unwrap().data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn missing_png_is_io_error() {
    assert!(matches!(load_png(Path::new("/nonexistent/x.png")), Err(aprnet::Error::Io { .. })));
}

/// Direct evaluation of the local-mean rule, one window at a time.
fn local_mean_oracle(img: &Tensor<f32>, window: usize, offset: f64) -> Mask {
    let g = grayscale(img);
    let (h, w, _) = g.hwc();
    let r = (window / 2) as isize;
    let mut m = Mask::new(h, w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut s, mut n) = (0.0f64, 0usize);
            for yy in (y - r).max(0)..(y + r + 1).min(h as isize) {
                for xx in (x - r).max(0)..(x + r + 1).min(w as isize) {
                    s += g.at(yy as usize, xx as usize, 0) as f64;
                    n += 1;
                }
            }
            let v = g.at(y as usize, x as usize, 0) as f64;
            m.set(y as usize, x as usize, v < s / n as f64 - offset);
        }
    }
    m
}

#[test]
fn binarization_matches_local_mean_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = synthesize(&SynthConfig::new(48, 120), &mut rng);
    for (window, offset) in [(31, 0.06), (7, 0.02), (15, 0.0)] {
        let fast = binarize_adaptive(&img, window, offset);
        assert_eq!(fast, local_mean_oracle(&img, window, offset), "window {window}, offset {offset}");
    }
}

#[test]
fn filled_square_thins_to_two_pixels() {
    let square = Mask::from_rows(&[
        ".........",
        ".........",
        "..#####..",
        "..#####..",
        "..#####..",
        "..#####..",
        "..#####..",
        ".........",
        ".........",
    ]);
    let want = Mask::from_rows(&[
        ".........",
        ".........",
        ".........",
        ".........",
        "....#....",
        "....#....",
        ".........",
        ".........",
        ".........",
    ]);
    assert_eq!(skeletonize(&square), want);
}

#[test]
fn thin_line_and_empty_mask_are_fixed_points() {
    let line = Mask::from_rows(&["......", ".####.", "......"]);
    assert_eq!(skeletonize(&line), line);
    let empty = Mask::new(4, 4);
    assert_eq!(skeletonize(&empty), empty);
}

#[test]
fn skeleton_keeps_component_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let img = synthesize(&SynthConfig::new(64, 160), &mut rng);
    let m = binarize_adaptive(&img, 31, 0.06);
    let s = skeletonize(&m);
    assert!(s.is_subset_of(&m));
    assert_eq!(s.components().1, m.components().1);
}

/// Rotates a square block a quarter turn counter-clockwise.
fn rotate_ccw(block: &[Vec<[f32; 3]>]) -> Vec<Vec<[f32; 3]>> {
    let p = block.len();
    (0..p).map(|y| (0..p).map(|x| block[x][p - 1 - y]).collect()).collect()
}

/// Rebuilds the shuffled image from a record, patch by patch.
fn replay(gt: &Tensor<f32>, rec: &aprnet::data::ShuffleRecord) -> Tensor<f32> {
    let p = rec.patch;
    let mut out = Tensor::zeros(gt.dims());
    for slot in 0..rec.rows * rec.cols {
        let src = rec.partners[slot].unwrap_or(slot);
        let (sr, sc) = (src / rec.cols, src % rec.cols);
        let mut block: Vec<Vec<[f32; 3]>> = (0..p)
            .map(|y| (0..p).map(|x| std::array::from_fn(|c| gt.at(sr * p + y, sc * p + x, c))).collect())
            .collect();
        for _ in 0..rec.rotations[src] {
            block = rotate_ccw(&block);
        }
        let (dr, dc) = (slot / rec.cols, slot % rec.cols);
        for (y, row) in block.iter().enumerate() {
            for (x, px) in row.iter().enumerate() {
                for (c, &v) in px.iter().enumerate() {
                    out.set(dr * p + y, dc * p + x, c, v);
                }
            }
        }
    }
    out
}

#[test]
fn single_crop_equals_record_replay() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = if seed == 0 { (32, 32) } else { (48, 64) };
        let gt = Tensor::<f32>::rand_uniform(&[h, w, 3], 0.0, 1.0, &mut rng);
        let (out, rec) = single_crop(&gt, 16, ShufflePolicy::default(), &mut rng).unwrap();
        assert_eq!(out, replay(&gt, &rec), "seed {seed}");
        for (i, p) in rec.partners.iter().enumerate() {
            if let Some(j) = *p {
                assert_eq!(rec.partners[j], Some(i), "swaps must pair up");
                let (ri, ci, rj, cj) = (i / rec.cols, i % rec.cols, j / rec.cols, j % rec.cols);
                assert!(ri.abs_diff(rj) <= 1 && ci.abs_diff(cj) <= 1 && i != j);
            }
        }
    }
}

#[test]
fn identity_policy_reproduces_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gt = Tensor::<f32>::rand_uniform(&[32, 48, 3], 0.0, 1.0, &mut rng);
    let (out, rec) = single_crop(&gt, 16, ShufflePolicy::identity(), &mut rng).unwrap();
    assert_eq!(out, gt);
    assert!(rec.partners.iter().all(Option::is_none));
    assert!(single_crop(&gt, 10, ShufflePolicy::identity(), &mut rng).is_err());
}

#[test]
fn triplets_are_seed_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let src = synthesize(&SynthConfig::new(64, 256), &mut rng);
    let cfg = TripletConfig::with_size(32, 96);
    let (a, ra) = make_triplet(&src, &cfg, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
    let (b, rb) = make_triplet(&src, &cfg, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert_eq!(a.content.dims(), &[32, 96, 1]);
    assert_eq!(a.style.dims(), &[32, 96, 3]);
    assert!(a.content.data().iter().all(|&v| v == 0.0 || v == 1.0));
}

#[test]
fn datagen_layout_manifest_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatagenConfig {
        triplet: TripletConfig::with_size(32, 64),
        synth_extra_width: 16,
        ..DatagenConfig::default()
    };
    let made = datagen(&Source::Synthetic(2), dir.path(), &cfg, 10, 3).unwrap();
    for kind in ["content", "style", "gt"] {
        for i in 0..3 {
            assert!(dir.path().join(kind).join(format!("{i:06}.png")).is_file());
        }
    }
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert_eq!(manifest, "000000 synthetic#0 10\n000001 synthetic#1 11\n000002 synthetic#0 12\n");

    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.len(), 3);
    for (g, t) in made.iter().zip(&loaded) {
        assert_eq!(g.triplet.content, t.content);
        assert!(g.triplet.ground_truth.max_abs_diff(&t.ground_truth) <= 1.0 / 255.0);
    }
}

#[test]
fn generation_does_not_depend_on_thread_count() {
    let cfg = DatagenConfig {
        triplet: TripletConfig::with_size(32, 64),
        synth_extra_width: 16,
        ..DatagenConfig::default()
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = pool.install(|| generate(&Source::Synthetic(2), &cfg, 1, 4).unwrap());
    let b = generate(&Source::Synthetic(2), &cfg, 1, 4).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.triplet, y.triplet);
    }
}

#[test]
fn directory_source_uses_every_png() {
    let src = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for name in ["b.png", "a.png"] {
        save_png(&src.path().join(name), &synthesize(&SynthConfig::new(40, 150), &mut rng)).unwrap();
    }
    let cfg = DatagenConfig {
        triplet: TripletConfig::with_size(32, 64),
        ..DatagenConfig::default()
    };
    let made = generate(&Source::Directory(src.path().to_path_buf()), &cfg, 0, 3).unwrap();
    let names: Vec<&str> = made.iter().map(|g| g.source.as_str()).collect();
    assert_eq!(names, ["a.png", "b.png", "a.png"]);
}
