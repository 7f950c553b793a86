mod common;

use common::{conv_reference, deform_reference, random_case};
use jmpose_core::ops::attention::attention_forward;
use jmpose_core::ops::conv::{conv2d_forward, Conv2dGeometry};
use jmpose_core::ops::deform::deform_conv_forward;
use jmpose_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn deformable_conv_matches_nested_loop_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..150 {
        let c = random_case(&mut rng, 3.0);
        let got = deform_conv_forward(&c.spec, &c.m, &c.off, &c.mask, &c.w, Some(&c.bias)).unwrap();
        worst = worst.max(got.max_abs_diff(&deform_reference(&c.m, &c.off, &c.mask, &c.w, &c.bias)));
    }
    assert!(worst < 1e-5, "max abs error {worst}");
}

#[test]
fn integer_offsets_read_exact_pixels() {
    // every tap shifted by (+1, -1): equals a conv of the input shifted the other way
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = random_case(&mut rng, 0.0);
    let (b, h, w) = (c.m.shape()[0], c.m.shape()[2], c.m.shape()[3]);
    let mut off = Tensor::zeros(&[b, 18, h, w]);
    for bi in 0..b {
        for q in 0..9 {
            for y in 0..h {
                for x in 0..w {
                    *off.at4_mut(bi, 2 * q, y, x) = 1.0;
                    *off.at4_mut(bi, 2 * q + 1, y, x) = -1.0;
                }
            }
        }
    }
    let got = deform_conv_forward(&c.spec, &c.m, &off, &c.mask, &c.w, Some(&c.bias)).unwrap();
    assert!(got.max_abs_diff(&deform_reference(&c.m, &off, &c.mask, &c.w, &c.bias)) < 1e-12);
}

#[test]
fn zero_offsets_and_unit_modulation_equal_standard_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..60 {
        let c = random_case(&mut rng, 0.0);
        let s = c.m.shape();
        let zeros = Tensor::zeros(&[s[0], 18, s[2], s[3]]);
        let ones = Tensor::full(&[s[0], 9, s[2], s[3]], 1.0);
        let d = deform_conv_forward(&c.spec, &c.m, &zeros, &ones, &c.w, Some(&c.bias)).unwrap();
        let plain = conv2d_forward(&c.m, &c.w, Some(&c.bias), Conv2dGeometry { stride: 1, padding: 1 }).unwrap();
        assert!(d.max_abs_diff(&plain) < 1e-5);
        assert!(plain.max_abs_diff(&conv_reference(&c.m, &c.w, &c.bias)) < 1e-10);
    }
}

#[test]
fn offsets_far_outside_read_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let c = random_case(&mut rng, 0.0);
    let s = c.m.shape();
    let far = Tensor::full(&[s[0], 18, s[2], s[3]], 50.0);
    let got = deform_conv_forward(&c.spec, &c.m, &far, &c.mask, &c.w, Some(&c.bias)).unwrap();
    for b in 0..s[0] {
        for o in 0..c.spec.out_channels {
            assert!((got.at4(b, o, 0, 0) - c.bias.data()[o]).abs() < 1e-12);
        }
    }
}

fn naive_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> (Tensor, Vec<Vec<Vec<f64>>>) {
    let s = q.shape();
    let (b, c, n) = (s[0], s[1], s[2] * s[3]);
    let tok = |t: &Tensor, bi: usize, i: usize| -> Vec<f64> { (0..t.shape()[1]).map(|ch| t.sample(bi)[ch * n + i]).collect() };
    let cv = v.shape()[1];
    let mut out = Tensor::zeros(&[b, cv, s[2], s[3]]);
    let mut probs = Vec::new();
    for bi in 0..b {
        let mut pb = Vec::new();
        for i in 0..n {
            let qi = tok(q, bi, i);
            let scores: Vec<f64> = (0..n).map(|j| qi.iter().zip(tok(k, bi, j)).map(|(a, b)| a * b).sum::<f64>() / (c as f64).sqrt()).collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            let p: Vec<f64> = e.iter().map(|v| v / z).collect();
            for ch in 0..cv {
                out.sample_mut(bi)[ch * n + i] = (0..n).map(|j| p[j] * v.sample(bi)[ch * n + j]).sum();
            }
            pb.push(p);
        }
        probs.push(pb);
    }
    (out, probs)
}

#[test]
fn attention_matches_naive_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let (b, c, h, w) = (2, rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
        let q = Tensor::randn(&[b, c, h, w], 1.5, &mut rng);
        let k = Tensor::randn(&[b, c, h, w], 1.5, &mut rng);
        let v = Tensor::randn(&[b, 3, h, w], 1.0, &mut rng);
        let a = attention_forward(&q, &k, &v, 4096).unwrap();
        let (want, probs) = naive_attention(&q, &k, &v);
        assert!(a.out.max_abs_diff(&want) < 1e-10);
        let n = h * w;
        for bi in 0..b {
            for i in 0..n {
                for j in 0..n {
                    assert!((a.probs.data()[(bi * n + i) * n + j] - probs[bi][i][j]).abs() < 1e-12);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn attention_rows_are_distributions(seed in 0u64..1000, scale in 0.1f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Tensor::randn(&[1, 4, 3, 4], scale, &mut rng);
        let k = Tensor::randn(&[1, 4, 3, 4], scale, &mut rng);
        let v = Tensor::randn(&[1, 2, 3, 4], 1.0, &mut rng);
        let a = attention_forward(&q, &k, &v, 4096).unwrap();
        for row in a.probs.data().chunks(12) {
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn deformable_conv_is_linear_in_input_and_modulation(seed in 0u64..1000, a in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_case(&mut rng, 2.0);
        let zero_bias = Tensor::zeros(&[c.spec.out_channels]);
        let f = |m: &Tensor, mask: &Tensor| deform_conv_forward(&c.spec, m, &c.off, mask, &c.w, Some(&zero_bias)).unwrap();
        let base = f(&c.m, &c.mask);
        prop_assert!(f(&c.m.scale(a), &c.mask).max_abs_diff(&base.scale(a)) < 1e-9);
        prop_assert!(f(&c.m, &c.mask.scale(a)).max_abs_diff(&base.scale(a)) < 1e-9);
    }
}
