//! Fast kernels against values computed once, independently, with numpy.

use aprnet::ops::{self, avg_pool_to, conv2d, resize_bilinear, softmax, Padding};
use aprnet::pixamp::{sample_attention_tensors, SamplingGrid};
use aprnet::pixymod::{modconv_forward, DEFAULT_EPS};
use aprnet::tensor::{ConvWeight, Tensor};
use proptest::prelude::*;

fn assert_close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol * (1.0 + w.abs()), "element {i}: got {g}, want {w}");
    }
}

const CONV_5X7X3: [f64; 70] = [
    4.125025667313039, 1.8708706913605306, 5.468431778442877, 3.1195855159587236, 5.86925192268977,
    5.473205407187669, 3.5096711781045897, 5.252691274222686, -0.5005627616680866, 2.5617543594255854,
    -4.275374213119358, -1.3340156591254106, -4.133975956130537, -1.9465828004424826, 7.228181947337037,
    4.494106779930864, 9.029086547913158, 6.437286971235093, 8.081819684461205, 8.647174586711463,
    3.333546741491127, 6.790160878227386, -2.982545322106899, 1.7396284095225276, -7.895899717161849,
    -4.129078482624491, -7.153787985606284, -4.569165208064899, 7.847849242559908, 6.057922210677825,
    9.165276049340804, 7.857922162788026, 6.414507592984365, 8.34189784861553, 0.6468959862014386,
    4.902548630489714, -5.424960910920637, -0.8425458129908776, -8.945373924284223, -6.191377795480374,
    -7.620906998545513, -6.058311299074534, 7.766491537811421, 7.080601492359103, 8.482758737775338,
    8.57663257040531, 4.174206642241245, 7.29146421997015, -2.097540060916871, 2.5770063146117983,
    -7.382780898458243, -3.3494579273428964, -9.19578452032102, -7.700619769344421, -7.407273086280173,
    -7.00628648491081, 4.849531463738158, 5.024722286808837, 4.964493862708994, 5.7677259295959935,
    1.3549983001361412, 3.9148957494576937, -2.891774135423213, 0.22082892641594495, -5.778500009875741,
    -3.5770971912663803, -5.947507038130389, -5.692658606210702, -4.529027963837709, -4.900027511586362,
];

#[test]
fn conv_matches_frozen_loop_values() {
    let x = Tensor::from_fn(5, 7, 3, |y, x, c| (0.3 * y as f64 + 0.7 * x as f64 + 1.1 * c as f64).sin());
    let mut w = Vec::new();
    for o in 0..2 {
        for ky in 0..3 {
            for kx in 0..3 {
                for i in 0..3 {
                    w.push((0.5 * o as f64 + 0.2 * ky as f64 - 0.3 * kx as f64 + 0.9 * i as f64).cos());
                }
            }
        }
    }
    let w = ConvWeight::new(2, 3, 3, 3, w).unwrap();
    let y = conv2d(&x, &w, 1, Padding::Same).unwrap();
    assert_eq!(y.dims(), &[5, 7, 2]);
    assert_close(y.data(), &CONV_5X7X3, 1e-12);
}

#[test]
fn conv_output_sizes() {
    let x = Tensor::<f32>::zeros(&[7, 10, 2]);
    let w = ConvWeight::new(4, 3, 3, 2, vec![0.0; 72]).unwrap();
    assert_eq!(conv2d(&x, &w, 2, Padding::Same).unwrap().dims(), &[4, 5, 4]);
    assert_eq!(conv2d(&x, &w, 1, Padding::Valid).unwrap().dims(), &[5, 8, 4]);
    let wrong = ConvWeight::new(4, 3, 3, 3, vec![0.0; 108]).unwrap();
    assert!(conv2d(&x, &wrong, 1, Padding::Same).is_err());
}

#[test]
fn softmax_of_one_two_three() {
    let p = softmax(&[1.0f64, 2.0, 3.0]).unwrap();
    assert_close(&p, &[0.09003057317038046, 0.24472847105479767, 0.6652409557748219], 1e-15);
}

#[test]
fn bilinear_two_by_two_to_four_by_four() {
    let x = Tensor::new(&[2, 2, 1], vec![0.0f64, 1.0, 2.0, 3.0]).unwrap();
    let y = resize_bilinear(&x, 4, 4).unwrap();
    #[rustfmt::skip]
    let want = [
        0.0, 0.25, 0.75, 1.0,
        0.5, 0.75, 1.25, 1.5,
        1.5, 1.75, 2.25, 2.5,
        2.0, 2.25, 2.75, 3.0,
    ];
    assert_close(y.data(), &want, 1e-15);
}

#[test]
fn pool_sixteen_by_forty_eight_to_two_by_six() {
    let x = Tensor::from_fn(16, 48, 1, |y, x, _| (y * 48 + x) as f64);
    let p = avg_pool_to(&x, 2, 6).unwrap();
    assert_close(p.data(), &[171.5, 179.5, 187.5, 195.5, 203.5, 211.5, 555.5, 563.5, 571.5, 579.5, 587.5, 595.5], 1e-15);
}

#[test]
fn uneven_pool_bins_cover_every_input() {
    assert_eq!(ops::adaptive_bins(5, 3), vec![(0, 2), (1, 4), (3, 5)]);
    assert_eq!(ops::adaptive_bins(48, 12).len(), 12);
}

const MODCONV_6X6X2: [f64; 72] = [
    0.49291852720020046, 0.770734833149394, -1.0695780676511837, -0.185191413142522, -1.3628898422941862,
    -1.6206117012854768, -0.6972038993481834, -1.9012228775356796, 0.45976010553968755, -0.8329955018268713,
    0.3014264715927756, -0.005329547243967441, 0.9187601276984264, 1.3748230263301218, -0.8209315790111472,
    0.44946332630010233, -1.861291706013226, -1.466006312673958, -1.5835344554091668, -2.311163115688816,
    -0.19252099678735227, -1.4872363668444397, 0.28074109951052867, -0.388786230062071, 1.5915726798683874,
    1.9901863163673914, 0.11319593756556928, 1.4131593106019675, -1.377183476578347, -0.48719622951463265,
    -1.881564180739853, -2.0108842164588303, -1.0512690606976338, -2.0632861108933476, -0.39859972416668266,
    -1.2338074881685215, 1.9240908942211765, 2.204899922640242, 0.9855513027830073, 2.0247243443458403,
    -0.5903279077319254, 0.5278096052123794, -1.727930906113136, -1.3456884898674626, -1.6001785024916033,
    -2.213411554015695, -0.9356413744478828, -1.8313199851956163, 1.8830464989648819, 2.0464936999664207,
    1.5609569133212182, 2.2131365228252045, 0.20261614142138468, 1.3135665731083475, -1.3200777697687123,
    -0.6628817795178783, -1.7825254929490877, -2.1579954411845996, -0.9924808463110283, -2.2306944988942874,
    1.4990846535554614, 1.5028468829381478, 1.6906045689486473, 1.797228973590681, 0.8143927421852714,
    1.4680856471211872, -0.8019700767169482, -0.16533722119180647, -1.7033010125037797, -1.6630271176760294,
    -1.4562052207554281, -1.930882885081497,
];

#[test]
fn modconv_matches_frozen_loop_values() {
    let c = Tensor::from_fn(6, 6, 2, |y, x, ch| (0.4 * y as f64 - 0.9 * x as f64 + 1.3 * ch as f64).sin());
    let s = Tensor::from_fn(6, 6, 2, |y, x, ch| 1.5 + (0.6 * y as f64 + 0.2 * x as f64 - 0.7 * ch as f64).cos());
    let mut w = Vec::new();
    for o in 0..2 {
        for ky in 0..3 {
            for kx in 0..3 {
                for i in 0..2 {
                    w.push((1.1 * o as f64 - 0.4 * ky as f64 + 0.5 * kx as f64 + 0.3 * i as f64 + 0.2).sin());
                }
            }
        }
    }
    let w = ConvWeight::new(2, 3, 3, 2, w).unwrap();
    let n = modconv_forward(&c, &s, &w, DEFAULT_EPS).unwrap();
    assert_close(n.data(), &MODCONV_6X6X2, 1e-12);
}

#[test]
fn modconv_unit_style_one_by_one_is_identity() {
    let c = Tensor::from_fn(3, 4, 1, |y, x, _| y as f64 - 0.5 * x as f64);
    let s = Tensor::full(&[3, 4, 1], 1.0);
    let w = ConvWeight::new(1, 1, 1, 1, vec![0.8]).unwrap();
    let n = modconv_forward(&c, &s, &w, DEFAULT_EPS).unwrap();
    assert!(n.max_abs_diff(&c) < 1e-7);
}

#[test]
fn modconv_rejects_mismatched_style() {
    let c = Tensor::<f64>::zeros(&[3, 4, 2]);
    let s = Tensor::<f64>::zeros(&[3, 4, 1]);
    let w = ConvWeight::new(1, 1, 1, 2, vec![1.0, 1.0]).unwrap();
    assert!(modconv_forward(&c, &s, &w, DEFAULT_EPS).is_err());
}

const PIXAMP_OUT: [f64; 48] = [
    0.17843217703577757, 0.16666666666666669, 0.17254942185122213, 0.17843217703577757, 0.4911694423311519,
    0.3348008096834647, 0.17843217703577757, 0.815721658105947, 0.49707691757086225, 0.17843217703577754,
    1.0, 0.5892160885178888, 0.5117655103691109, 0.18427834189405295, 0.3480219261315819, 0.5117655103691109,
    0.5088305576688481, 0.5102980340189796, 0.5117655103691109, 0.8333333333333334, 0.6725494218512221,
    0.5117655103691108, 0.9999999999999998, 0.7558827551845555, 0.8450988437024443, 0.20150105082297115,
    0.5232999472627077, 0.8450988437024443, 0.5262950136126554, 0.6856969286575498, 0.8450988437024443,
    0.8509450085607195, 0.848021926131582, 0.8450988437024443, 1.0, 0.9225494218512221, 1.0,
    0.21797944701925115, 0.6089897235096255, 1.0, 0.5431866986565471, 0.7715933493282736, 1.0,
    0.8681677174896378, 0.9340838587448188, 1.0, 1.0, 1.0,
];

const PIXAMP_WEIGHTS: [f64; 64] = [
    0.23235173444633367, 0.23235173444633367, 0.2676482655536664, 0.2676482655536664, 0.244662506789245,
    0.22004096210342225, 0.2818291662172993, 0.25346736489003346, 0.256904354159866, 0.20779911473280124,
    0.29593067152229285, 0.23936585958503984, 0.23235173444633367, 0.23235173444633367, 0.26764826555366633,
    0.26764826555366633, 0.20779911473280122, 0.25690435415986607, 0.23936585958503986, 0.29593067152229285,
    0.22004096210342228, 0.244662506789245, 0.25346736489003346, 0.2818291662172993, 0.2323517344463336,
    0.2323517344463336, 0.2676482655536664, 0.2676482655536664, 0.2323517344463336, 0.2323517344463336,
    0.26764826555366633, 0.26764826555366633, 0.1837887569838102, 0.28091471190885703, 0.21170809054727627,
    0.3235884405600565, 0.19569358232519085, 0.2690098865674764, 0.2254213768368426, 0.3098751542704901,
    0.20779911473280124, 0.256904354159866, 0.2393658595850399, 0.29593067152229285, 0.2323517344463336,
    0.2323517344463336, 0.2676482655536664, 0.2676482655536664, 0.17303082947112328, 0.32696917052887675,
    0.17303082947112328, 0.32696917052887675, 0.18521995201517924, 0.31478004798482073, 0.18521995201517924,
    0.31478004798482073, 0.19774842376554322, 0.30225157623445675, 0.19774842376554322, 0.30225157623445675,
    0.25, 0.25, 0.25, 0.25,
];

#[test]
fn sampling_attention_on_hand_set_four_by_four() {
    let q = Tensor::from_fn(4, 4, 2, |y, x, c| if c == 0 { y as f64 - 0.5 * x as f64 } else { 1.0 });
    let k = Tensor::from_fn(4, 4, 2, |y, x, c| if c == 0 { 0.3 * x as f64 } else { 0.2 * y as f64 - 0.5 });
    let v = Tensor::from_fn(4, 4, 3, |y, x, c| match c {
        0 => y as f64 / 3.0,
        1 => x as f64 / 3.0,
        _ => (y + x) as f64 / 6.0,
    });
    let (out, w) = sample_attention_tensors(&q, &k, &v, SamplingGrid::new(2, 1).unwrap()).unwrap();
    assert_close(out.data(), &PIXAMP_OUT, 1e-12);
    assert_close(w.data(), &PIXAMP_WEIGHTS, 1e-12);
}

#[test]
fn default_grid_spans_seventeen_pixels() {
    let g = SamplingGrid::default();
    assert_eq!((g.k(), g.m(), g.candidates(), g.span()), (5, 4, 25, 17));
    assert_eq!(g.axis_offsets(), vec![-8, -4, 0, 4, 8]);
    assert!(SamplingGrid::new(0, 1).is_err());
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(
        logits in prop::collection::vec(-30.0f64..30.0, 1..12),
        shift in -50.0f64..50.0,
    ) {
        let p = softmax(&logits).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v > 0.0 && v <= 1.0));
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let q = softmax(&shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn global_pool_ignores_spatial_permutation(seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::rand_uniform(&[4, 6, 3], -1.0, 1.0, &mut rng);
        let mut order: Vec<usize> = (0..24).collect();
        order.shuffle(&mut rng);
        let y = Tensor::from_fn(4, 6, 3, |r, c, ch| {
            let src = order[r * 6 + c];
            x.at(src / 6, src % 6, ch)
        });
        let a = avg_pool_to(&x, 1, 1).unwrap();
        let b = avg_pool_to(&y, 1, 1).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }
}
