use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{central_differences, compare_block};
use crate::tensor::{center_crop, Image};

fn random<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(lo..hi)))
}

fn random_field<T: Real>(rng: &mut ChaCha8Rng, k: usize, h: usize, w: usize) -> SeparableKernelField<T> {
    SeparableKernelField::new(
        random(rng, &[k, h, w], -0.2, 0.6),
        random(rng, &[k, h, w], -0.2, 0.6),
        random(rng, &[k, h, w], -0.2, 0.6),
        random(rng, &[k, h, w], -0.2, 0.6),
    )
    .unwrap()
}

fn pad_for(img: &Tensor<f32>, k: usize) -> Tensor<f32> {
    replicate_pad(img, (k - 1) / 2)
}

#[test]
fn delta_kernels_reproduce_the_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img: Tensor<f32> = random(&mut rng, &[3, 6, 7], 0.0, 1.0);
    let f = SeparableKernelField::constant(&SeparableKernelField::<f32>::delta_taps(5), 6, 7);
    let out = sepconv_forward(&pad_for(&img, 5), &f.k1h, &f.k1v).unwrap();
    assert_eq!(out, img);
}

#[test]
fn uniform_kernels_are_a_box_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (h, w, k) = (5, 6, 3);
    let img: Tensor<f32> = random(&mut rng, &[1, h, w], 0.0, 1.0);
    let f = SeparableKernelField::constant(&[1.0 / 3.0; 3], h, w);
    let out = sepconv_forward(&pad_for(&img, k), &f.k1h, &f.k1v).unwrap();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0f64;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    s += img.data()[clamp(y as isize + dy, h) * w + clamp(x as isize + dx, w)] as f64;
                }
            }
            assert!((out.data()[y * w + x] as f64 - s / 9.0).abs() < 1e-6);
        }
    }
}

#[test]
fn random_instance_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img: Tensor<f32> = random(&mut rng, &[3, 8, 8], 0.0, 1.0);
    let f = random_field::<f32>(&mut rng, 5, 8, 8);
    let out = sepconv_forward(&pad_for(&img, 5), &f.k1h, &f.k1v).unwrap();
    let oracle = full2d_oracle(&img, &f.k1h, &f.k1v).unwrap();
    assert!(out.cast::<f64>().max_abs_diff(&oracle) <= 1e-5);
}

#[test]
fn oracle_edge_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img: Tensor<f32> = random(&mut rng, &[3, 4, 5], 0.0, 1.0);
    let delta = SeparableKernelField::constant(&SeparableKernelField::<f32>::delta_taps(3), 4, 5);
    assert_eq!(full2d_oracle(&img, &delta.k1h, &delta.k1v).unwrap(), img.cast::<f64>());
    let zero = SeparableKernelField::<f32>::zeros(3, 4, 5);
    assert_eq!(full2d_oracle(&img, &zero.k1h, &zero.k1v).unwrap().max_abs(), 0.0);
}

#[test]
fn shape_mismatch_is_rejected() {
    let img = Tensor::<f32>::zeros(&[3, 8, 8]);
    let k = Tensor::<f32>::zeros(&[5, 3, 3]);
    assert!(matches!(sepconv_forward(&img, &k, &k), Err(Error::Shape(_))));
    let even = Tensor::<f32>::zeros(&[4, 5, 5]);
    assert!(sepconv_forward(&img, &even, &even).is_err());
}

#[test]
fn zero_upstream_gradient_gives_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img: Tensor<f32> = random(&mut rng, &[3, 6, 6], 0.0, 1.0);
    let f = random_field::<f32>(&mut rng, 3, 6, 6);
    let (_, tape) = sepconv_forward_taped(pad_for(&img, 3), &f.k1h, &f.k1v).unwrap();
    let g = sepconv_backward(&tape, &Tensor::zeros(&[3, 6, 6])).unwrap();
    assert_eq!(g.padded.max_abs() + g.kh.max_abs() + g.kv.max_abs(), 0.0);
}

#[test]
fn single_pixel_gradient_with_delta_kernels_is_a_delta() {
    let (h, w, k) = (4, 5, 3);
    let img = Tensor::<f32>::from_fn(&[1, h, w], |i| i as f32);
    let f = SeparableKernelField::constant(&SeparableKernelField::<f32>::delta_taps(k), h, w);
    let (_, tape) = sepconv_forward_taped(pad_for(&img, k), &f.k1h, &f.k1v).unwrap();
    let mut g = Tensor::<f32>::zeros(&[1, h, w]);
    g.data_mut()[2 * w + 3] = 1.0;
    let grads = sepconv_backward(&tape, &g).unwrap();
    let (pw, r) = (w + k - 1, (k - 1) / 2);
    for (idx, &v) in grads.padded.data().iter().enumerate() {
        let want = if idx == (2 + r) * pw + 3 + r { 1.0 } else { 0.0 };
        assert_eq!(v, want);
    }
}

/// Numeric gradients of `<grad_out, forward(padded, kh, kv)>` in 64-bit.
fn numeric_operator_grads(
    padded: &Tensor<f64>,
    kh: &Tensor<f64>,
    kv: &Tensor<f64>,
    grad_out: &Tensor<f64>,
    step: f64,
) -> [Vec<f64>; 3] {
    let objective = |p: &Tensor<f64>, a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
        let o = sepconv_forward(p, a, b).unwrap();
        o.data().iter().zip(grad_out.data()).map(|(x, g)| x * g).sum()
    };
    let with = |t: &Tensor<f64>, x: &[f64]| Tensor::new(t.shape().to_vec(), x.to_vec()).unwrap();
    [
        central_differences(|x| objective(&with(padded, x), kh, kv), padded.data(), step),
        central_differences(|x| objective(padded, &with(kh, x), kv), kh.data(), step),
        central_differences(|x| objective(padded, kh, &with(kv, x)), kv.data(), step),
    ]
}

#[test]
fn backward_matches_finite_differences_in_64_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (c, h, w, k) = (3, 5, 6, 5);
    let padded: Tensor<f64> = random(&mut rng, &[c, h + k - 1, w + k - 1], 0.0, 1.0);
    let kh: Tensor<f64> = random(&mut rng, &[k, h, w], -0.5, 0.5);
    let kv: Tensor<f64> = random(&mut rng, &[k, h, w], -0.5, 0.5);
    let g: Tensor<f64> = random(&mut rng, &[c, h, w], -1.0, 1.0);
    let (_, tape) = sepconv_forward_taped(padded.clone(), &kh, &kv).unwrap();
    let analytic = sepconv_backward(&tape, &g).unwrap();
    let numeric = numeric_operator_grads(&padded, &kh, &kv, &g, 1e-3);
    for (name, a, n) in [
        ("padded", &analytic.padded, &numeric[0]),
        ("kh", &analytic.kh, &numeric[1]),
        ("kv", &analytic.kv, &numeric[2]),
    ] {
        let r = compare_block(name, a.data(), n, 0.0);
        assert!(r.passes(1e-6), "{r:?}");
    }
}

#[test]
fn backward_in_32_bit_matches_64_bit_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (c, h, w, k) = (3, 6, 4, 3);
    let padded: Tensor<f64> = random(&mut rng, &[c, h + k - 1, w + k - 1], 0.0, 1.0);
    let kh: Tensor<f64> = random(&mut rng, &[k, h, w], -0.5, 0.5);
    let kv: Tensor<f64> = random(&mut rng, &[k, h, w], -0.5, 0.5);
    let g: Tensor<f64> = random(&mut rng, &[c, h, w], -1.0, 1.0);
    let (_, tape) = sepconv_forward_taped(padded.cast::<f32>(), &kh.cast(), &kv.cast()).unwrap();
    let analytic = sepconv_backward(&tape, &g.cast()).unwrap();
    let numeric = numeric_operator_grads(&padded, &kh, &kv, &g, 1e-3);
    for (name, a, n) in [
        ("padded", &analytic.padded, &numeric[0]),
        ("kh", &analytic.kh, &numeric[1]),
        ("kv", &analytic.kv, &numeric[2]),
    ] {
        let r = compare_block(name, a.cast::<f64>().data(), n, 1e-3);
        assert!(r.passes(1e-3), "{r:?}");
    }
}

#[test]
fn padding_adjoint_folds_operator_gradient() {
    // End-to-end gradient w.r.t. the unpadded image equals the folded
    // gradient on the padded grid.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (h, w, k) = (4, 4, 3);
    let img: Tensor<f64> = random(&mut rng, &[1, h, w], 0.0, 1.0);
    let kh: Tensor<f64> = random(&mut rng, &[k, h, w], -0.5, 0.5);
    let kv: Tensor<f64> = random(&mut rng, &[k, h, w], -0.5, 0.5);
    let g: Tensor<f64> = random(&mut rng, &[1, h, w], -1.0, 1.0);
    let (_, tape) = sepconv_forward_taped(replicate_pad(&img, 1), &kh, &kv).unwrap();
    let folded = crate::tensor::replicate_pad_adjoint(&sepconv_backward(&tape, &g).unwrap().padded, 1).unwrap();
    let numeric = central_differences(
        |x| {
            let t = Tensor::new(vec![1, h, w], x.to_vec()).unwrap();
            let o = sepconv_forward(&replicate_pad(&t, 1), &kh, &kv).unwrap();
            o.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
        },
        img.data(),
        1e-3,
    );
    assert!(compare_block("image", folded.data(), &numeric, 0.0).passes(1e-6));
}

#[test]
fn denominator_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let uniform = SeparableKernelField::<f32>::constant(&[0.2; 5], 3, 4);
    let d = normalization_denominator(&uniform, 3, 4).unwrap();
    assert_eq!(d.shape(), &[1, 3, 4]);
    assert!(d.data().iter().all(|&v| (v - 2.0).abs() < 1e-6));
    let zero = SeparableKernelField::<f32>::zeros(5, 3, 4);
    assert_eq!(normalization_denominator(&zero, 3, 4).unwrap().max_abs(), 0.0);

    let f = random_field::<f32>(&mut rng, 5, 3, 4);
    let d = normalization_denominator(&f, 3, 4).unwrap();
    for p in 0..12 {
        let sum = |t: &Tensor<f32>| (0..5).map(|i| t.data()[i * 12 + p] as f64).sum::<f64>();
        let want = sum(&f.k1h) * sum(&f.k1v) + sum(&f.k2h) * sum(&f.k2v);
        assert!((d.data()[p] as f64 - want).abs() <= 1e-6);
    }
    assert!(normalization_denominator(&f, 4, 4).is_err());
}

fn image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Image<f32> {
    Image::new(random(rng, &[c, h, w], 0.0, 1.0)).unwrap()
}

#[test]
fn constant_frames_survive_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let f = random_field::<f32>(&mut rng, 5, 6, 6);
    let i = Image::filled(3, 6, 6, 0.37f32).unwrap();
    let out = interpolate_with_kernels(&i, &i, &f, true).unwrap();
    let d = normalization_denominator(&f, 6, 6).unwrap();
    for (p, &dv) in d.data().iter().enumerate() {
        if dv.abs() as f64 >= DENOMINATOR_EPS {
            for c in 0..3 {
                assert!((out.data()[c * 36 + p] - 0.37).abs() <= 1e-5);
            }
        }
    }
}

#[test]
fn zero_second_frame_and_delta_first_frame_returns_first() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (i1, i2) = (image(&mut rng, 3, 5, 6), image(&mut rng, 3, 5, 6));
    let mut f = SeparableKernelField::constant(&SeparableKernelField::<f32>::delta_taps(3), 5, 6);
    f.k2h = Tensor::zeros(&[3, 5, 6]);
    f.k2v = Tensor::zeros(&[3, 5, 6]);
    for normalized in [false, true] {
        assert_eq!(interpolate_with_kernels(&i1, &i2, &f, normalized).unwrap(), i1);
    }
}

#[test]
fn normalized_output_matches_oracle_quotient() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (i1, i2) = (image(&mut rng, 3, 7, 5), image(&mut rng, 3, 7, 5));
    let f = random_field::<f32>(&mut rng, 5, 7, 5);
    let out = interpolate_with_kernels(&i1, &i2, &f, true).unwrap();
    let num1 = full2d_oracle(i1.tensor(), &f.k1h, &f.k1v).unwrap();
    let num2 = full2d_oracle(i2.tensor(), &f.k2h, &f.k2v).unwrap();
    let ones = Tensor::<f64>::full(&[1, 7, 5], 1.0);
    let den1 = full2d_oracle(&ones, &f.k1h.cast(), &f.k1v.cast()).unwrap();
    let den2 = full2d_oracle(&ones, &f.k2h.cast(), &f.k2v.cast()).unwrap();
    for c in 0..3 {
        for p in 0..35 {
            let den = den1.data()[p] + den2.data()[p];
            assert!(den.abs() > 1e-3, "test instance should be well conditioned");
            let want = (num1.data()[c * 35 + p] + num2.data()[c * 35 + p]) / den;
            assert!((out.data()[c * 35 + p] as f64 - want).abs() <= 1e-5);
        }
    }
}

#[test]
fn vanishing_denominator_falls_back_to_numerator() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (i1, i2) = (image(&mut rng, 1, 3, 3), image(&mut rng, 1, 3, 3));
    let mut f = SeparableKernelField::<f32>::constant(&[0.5, 0.0, -0.5], 3, 3);
    f.k1v = Tensor::full(&[3, 3, 3], 0.25);
    f.k2v = Tensor::full(&[3, 3, 3], 0.25);
    let plain = interpolate_with_kernels(&i1, &i2, &f, false).unwrap();
    let normed = interpolate_with_kernels(&i1, &i2, &f, true).unwrap();
    assert_eq!(plain, normed);
    assert!(normed.tensor().all_finite());
}

/// Loss `<g, interpolate(...)>` in 64-bit for finite differences over one field.
fn interpolation_objective(
    i1: &Tensor<f64>,
    i2: &Tensor<f64>,
    f: &SeparableKernelField<f64>,
    g: &Tensor<f64>,
    normalized: bool,
) -> f64 {
    let (o, _) = interpolate_tensors(i1, i2, f, normalized).unwrap();
    o.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
}

#[test]
fn interpolation_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (c, h, w, k) = (3, 4, 5, 3);
    let i1: Tensor<f64> = random(&mut rng, &[c, h, w], 0.0, 1.0);
    let i2: Tensor<f64> = random(&mut rng, &[c, h, w], 0.0, 1.0);
    let f = random_field::<f64>(&mut rng, k, h, w);
    let g: Tensor<f64> = random(&mut rng, &[c, h, w], -1.0, 1.0);
    for normalized in [false, true] {
        let (_, tape) = interpolate_tensors(&i1, &i2, &f, normalized).unwrap();
        let analytic = interpolate_backward(&tape, &g).unwrap();
        let analytic32 = {
            let (_, t32) = interpolate_tensors(&i1.cast::<f32>(), &i2.cast(), &f.cast(), normalized).unwrap();
            interpolate_backward(&t32, &g.cast()).unwrap()
        };
        for idx in 0..4 {
            let numeric = central_differences(
                |x| {
                    let mut probe = f.clone();
                    *probe.fields_mut()[idx] = Tensor::new(vec![k, h, w], x.to_vec()).unwrap();
                    interpolation_objective(&i1, &i2, &probe, &g, normalized)
                },
                f.fields()[idx].data(),
                1e-6,
            );
            let r64 = compare_block("field", analytic.fields()[idx].data(), &numeric, 0.0);
            assert!(r64.passes(1e-6), "normalized={normalized} {r64:?}");
            let r32 = compare_block("field", analytic32.fields()[idx].cast::<f64>().data(), &numeric, 1e-3);
            assert!(r32.passes(1e-3), "normalized={normalized} {r32:?}");
        }
    }
}

#[test]
fn unit_mass_makes_normalization_a_no_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (i1, i2) = (image(&mut rng, 3, 6, 6), image(&mut rng, 3, 6, 6));
    let taps = [0.1f32, 0.2, 0.4, 0.2, 0.1];
    let mut f = SeparableKernelField::constant(&taps, 6, 6);
    f.k1v = f.k1v.scale(0.5);
    f.k2v = f.k2v.scale(0.5);
    let a = interpolate_with_kernels(&i1, &i2, &f, false).unwrap();
    let b = interpolate_with_kernels(&i1, &i2, &f, true).unwrap();
    assert!(a.max_abs_diff(&b) <= 1e-6);
}

#[test]
fn crop_of_padded_forward_input_is_the_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let img: Tensor<f32> = random(&mut rng, &[3, 5, 5], 0.0, 1.0);
    let f = random_field::<f32>(&mut rng, 5, 5, 5);
    let (_, tape) = sepconv_forward_taped(pad_for(&img, 5), &f.k1h, &f.k1v).unwrap();
    assert_eq!(center_crop(tape.padded(), 2).unwrap(), img);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn separable_equals_dense(c in prop::sample::select(vec![1usize, 3]), h in 1usize..=16, w in 1usize..=16,
                              k in prop::sample::select(vec![3usize, 5, 7]), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img: Tensor<f32> = random(&mut rng, &[c, h, w], 0.0, 1.0);
        let f = random_field::<f32>(&mut rng, k, h, w);
        let out = sepconv_forward(&pad_for(&img, k), &f.k1h, &f.k1v).unwrap();
        let oracle = full2d_oracle(&img, &f.k1h, &f.k1v).unwrap();
        prop_assert!(out.cast::<f64>().max_abs_diff(&oracle) <= 1e-5);
    }

    #[test]
    fn normalized_output_is_invariant_to_positive_rescaling(seed in any::<u64>(), s in 0.05f32..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (i1, i2) = (image(&mut rng, 3, 6, 5), image(&mut rng, 3, 6, 5));
        let f = SeparableKernelField::new(
            random(&mut rng, &[5, 6, 5], 0.0, 0.5),
            random(&mut rng, &[5, 6, 5], 0.0, 0.5),
            random(&mut rng, &[5, 6, 5], 0.0, 0.5),
            random(&mut rng, &[5, 6, 5], 0.0, 0.5),
        ).unwrap();
        let a = interpolate_with_kernels(&i1, &i2, &f, true).unwrap();
        let b = interpolate_with_kernels(&i1, &i2, &f.scale(s), true).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-5);
    }

    #[test]
    fn unnormalized_operator_is_linear_in_the_image(seed in any::<u64>(), a in -2.0f32..2.0, b in -2.0f32..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let i: Tensor<f32> = random(&mut rng, &[3, 7, 6], 0.0, 1.0);
        let j: Tensor<f32> = random(&mut rng, &[3, 7, 6], 0.0, 1.0);
        let f = random_field::<f32>(&mut rng, 5, 7, 6);
        let mix = i.zip_map(&j, |x, y| a * x + b * y).unwrap();
        let lhs = sepconv_forward(&pad_for(&mix, 5), &f.k1h, &f.k1v).unwrap();
        let fi = sepconv_forward(&pad_for(&i, 5), &f.k1h, &f.k1v).unwrap();
        let fj = sepconv_forward(&pad_for(&j, 5), &f.k1h, &f.k1v).unwrap();
        let rhs = fi.zip_map(&fj, |x, y| a * x + b * y).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-5);
    }
}
