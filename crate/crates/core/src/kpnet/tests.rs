use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::gradcheck::GradCheck;
use crate::real::Real;
use crate::sepconv::{interpolate_backward, interpolate_tensors};
use crate::tensor::Tensor;

fn cfg(levels: usize, base: usize, k: usize) -> KPNetConfig {
    KPNetConfig {
        levels,
        base_channels: base,
        kernel_size: k,
        image_channels: 3,
    }
}

fn random<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-1.0..1.0)))
}

/// Parameter count by walking the layer schedule: full-resolution stem,
/// stride-2 encoder convs, a residual block (two convs, one PReLU) on each
/// level from the head level up, one decoder conv per upsampling step and
/// four single-conv heads.
fn schedule_param_count(levels: usize, base: usize, k: usize, image_channels: usize) -> usize {
    let ch = |l: usize| base * (1 << l);
    let conv = |cin: usize, cout: usize| cout * cin * 9 + cout;
    let head_level = if levels >= 2 { 1 } else { 0 };
    let mut n = conv(2 * image_channels, ch(0)) + ch(0);
    for l in 1..levels {
        n += conv(ch(l - 1), ch(l)) + ch(l);
    }
    for l in head_level..levels {
        n += 2 * conv(ch(l), ch(l)) + ch(l);
    }
    for l in head_level..levels - 1 {
        n += conv(ch(l + 1), ch(l)) + ch(l);
    }
    n + 4 * conv(ch(head_level), k)
}

#[test]
fn parameter_count_follows_the_schedule() {
    let net = KPNet::<f32>::init(cfg(3, 16, 5), 0).unwrap();
    assert_eq!(net.num_params(), schedule_param_count(3, 16, 5, 3));
    assert_eq!(net.num_params(), 140_852);
    for (levels, base, k) in [(1, 2, 3), (2, 4, 5), (4, 3, 7)] {
        let net = KPNet::<f32>::init(cfg(levels, base, k), 0).unwrap();
        assert_eq!(net.num_params(), schedule_param_count(levels, base, k, 3));
    }
}

#[test]
fn parameter_count_grows_with_width_and_depth() {
    let count = |l, b| KPNet::<f32>::init(cfg(l, b, 5), 0).unwrap().num_params();
    for l in 1..5 {
        for b in 1..6 {
            assert!(count(l, b + 1) > count(l, b));
            assert!(count(l + 1, b) > count(l, b));
        }
    }
}

#[test]
fn rejects_invalid_configs() {
    assert!(KPNet::<f32>::init(cfg(0, 4, 5), 0).is_err());
    assert!(KPNet::<f32>::init(cfg(2, 0, 5), 0).is_err());
    assert!(KPNet::<f32>::init(cfg(2, 4, 4), 0).is_err());
}

#[test]
fn init_is_seed_deterministic() {
    let a = KPNet::<f32>::init(cfg(3, 4, 5), 11).unwrap();
    let b = KPNet::<f32>::init(cfg(3, 4, 5), 11).unwrap();
    let c = KPNet::<f32>::init(cfg(3, 4, 5), 12).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
    let slopes: Vec<f32> = a
        .param_specs()
        .iter()
        .filter(|s| s.name.ends_with(".slope"))
        .flat_map(|s| a.params()[s.range.clone()].to_vec())
        .collect();
    assert!(!slopes.is_empty() && slopes.iter().all(|&v| v == 0.25));
}

#[test]
fn output_shapes_follow_the_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = KPNet::<f32>::init(cfg(3, 4, 5), 1).unwrap();
    let (i1, i2) = (random(&mut rng, &[3, 32, 32]), random(&mut rng, &[3, 32, 32]));
    let (f, _) = net.forward(&i1, &i2).unwrap();
    for t in f.fields() {
        assert_eq!(t.shape(), &[5, 32, 32]);
    }
}

#[test]
fn indivisible_input_is_rejected() {
    let net = KPNet::<f32>::init(cfg(3, 4, 5), 1).unwrap();
    let x = Tensor::<f32>::zeros(&[3, 30, 32]);
    match net.forward(&x, &x) {
        Err(Error::Indivisible { multiple, .. }) => assert_eq!(multiple, 4),
        other => panic!("expected divisibility error, got {other:?}"),
    }
}

#[test]
fn zero_weights_leave_the_head_biases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut net = KPNet::<f32>::init(cfg(2, 4, 5), 3).unwrap();
    let specs = net.param_specs().to_vec();
    for s in &specs {
        let slot = &mut net.params_mut()[s.range.clone()];
        if s.name.ends_with(".weight") {
            slot.fill(0.0);
        } else if s.name.starts_with("head.") {
            for (i, v) in slot.iter_mut().enumerate() {
                *v = 0.1 * (i + 1) as f32;
            }
        }
    }
    let (i1, i2) = (random(&mut rng, &[3, 8, 12]), random(&mut rng, &[3, 8, 12]));
    let (f, _) = net.forward(&i1, &i2).unwrap();
    for t in f.fields() {
        for tap in 0..5 {
            let plane = &t.data()[tap * 96..(tap + 1) * 96];
            assert!(plane.iter().all(|&v| v == 0.1 * (tap + 1) as f32));
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = KPNet::<f32>::init(cfg(3, 4, 5), 5).unwrap();
    let (i1, i2) = (random(&mut rng, &[3, 16, 16]), random(&mut rng, &[3, 16, 16]));
    let a = net.forward(&i1, &i2).unwrap().0;
    let b = net.clone().forward(&i1, &i2).unwrap().0;
    assert_eq!(a, b);
}

#[test]
fn zero_upstream_gradient_and_repeatability() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = KPNet::<f32>::init(cfg(3, 2, 3), 7).unwrap();
    let (i1, i2) = (random(&mut rng, &[3, 8, 8]), random(&mut rng, &[3, 8, 8]));
    let (f, tape) = net.forward(&i1, &i2).unwrap();
    let zero = crate::sepconv::SeparableKernelField::zeros(3, 8, 8);
    assert!(net.backward(&tape, &zero).unwrap().iter().all(|&v| v == 0.0));
    let g = f.scale(0.3);
    assert_eq!(net.backward(&tape, &g).unwrap(), net.backward(&tape, &g).unwrap());
    assert!(net
        .backward(&tape, &crate::sepconv::SeparableKernelField::zeros(3, 4, 8))
        .is_err());
}

struct Problem<T> {
    i1: Tensor<T>,
    i2: Tensor<T>,
    gt: Tensor<T>,
}

impl<T: Real> Problem<T> {
    fn cast<U: Real>(&self) -> Problem<U> {
        Problem {
            i1: self.i1.cast(),
            i2: self.i2.cast(),
            gt: self.gt.cast(),
        }
    }
}

/// Mean absolute error of the kernel-normalized synthesis.
fn l1_loss<T: Real>(net: &KPNet<T>, p: &Problem<T>) -> f64 {
    let (f, _) = net.forward(&p.i1, &p.i2).unwrap();
    let (out, _) = interpolate_tensors(&p.i1, &p.i2, &f, true).unwrap();
    let n = out.len() as f64;
    out.data()
        .iter()
        .zip(p.gt.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
        .sum::<f64>()
        / n
}

fn l1_grad<T: Real>(net: &KPNet<T>, p: &Problem<T>) -> Vec<T> {
    let (f, tape) = net.forward(&p.i1, &p.i2).unwrap();
    let (out, itape) = interpolate_tensors(&p.i1, &p.i2, &f, true).unwrap();
    let inv_n = T::of(1.0 / out.len() as f64);
    let g = out
        .zip_map(&p.gt, |a, b| {
            if a > b {
                inv_n
            } else if a < b {
                -inv_n
            } else {
                T::zero()
            }
        })
        .unwrap();
    let gk = interpolate_backward(&itape, &g).unwrap();
    net.backward(&tape, &gk).unwrap()
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for (seed, levels, base, k, size) in [(1u64, 1, 2, 3, 8), (2, 2, 2, 3, 8), (3, 3, 2, 5, 8)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net64 = KPNet::<f64>::init(cfg(levels, base, k), seed).unwrap();
        let p64 = Problem {
            i1: random::<f64>(&mut rng, &[3, size, size]).map(|v| 0.5 + 0.5 * v),
            i2: random::<f64>(&mut rng, &[3, size, size]).map(|v| 0.5 + 0.5 * v),
            gt: random::<f64>(&mut rng, &[3, size, size]).map(|v| 0.5 + 0.5 * v),
        };
        let analytic64 = l1_grad(&net64, &p64);
        let analytic32: Vec<f64> = l1_grad(&net64.cast::<f32>(), &p64.cast::<f32>())
            .iter()
            .map(|&v| v as f64)
            .collect();
        let scale = analytic64.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for spec in net64.param_specs() {
            let r = spec.range.clone();
            let loss = |x: &[f64]| {
                let mut params = net64.params().to_vec();
                params[r.clone()].copy_from_slice(x);
                l1_loss(&KPNet::from_params(net64.config().clone(), seed, params).unwrap(), &p64)
            };
            let x = &net64.params()[r.clone()];
            let check64 = GradCheck {
                steps: vec![1e-4, 1e-5, 1e-6],
                floor_fraction: 1e-3,
                tolerance: 1e-6,
            };
            let r64 = check64.check(&spec.name, loss, x, &analytic64[r.clone()], scale);
            assert!(r64.passes(1e-6), "seed {seed}: {r64:?}");
            let check32 = GradCheck {
                tolerance: 1e-3,
                ..check64
            };
            let r32 = check32.check(&spec.name, loss, x, &analytic32[spec.range.clone()], scale);
            assert!(r32.passes(1e-3), "seed {seed}: {r32:?}");
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.skpn");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let net = KPNet::<f32>::init(cfg(2, 3, 5), 9).unwrap();
    let ck = Checkpoint {
        net: net.clone(),
        meta: TrainingMeta {
            epoch: 7,
            loss_history: vec![0.5, 0.25, 0.125],
        },
    };
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.meta, ck.meta);
    assert_eq!(back.net.params(), net.params());
    assert_eq!(back.net.seed(), 9);
    let (i1, i2) = (random(&mut rng, &[3, 8, 8]), random(&mut rng, &[3, 8, 8]));
    assert_eq!(back.net.forward(&i1, &i2).unwrap().0, net.forward(&i1, &i2).unwrap().0);
}

#[test]
fn checkpoint_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.skpn");
    let net = KPNet::<f32>::init(cfg(2, 3, 5), 9).unwrap();
    net.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Corrupt { .. })));

    let mut wrong_version = bytes.clone();
    wrong_version[4..8].copy_from_slice(&99u32.to_le_bytes());
    std::fs::write(&path, &wrong_version).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Version { found: 99, .. })));

    std::fs::write(&path, &bytes).unwrap();
    assert!(Checkpoint::load_expecting(&path, &cfg(2, 3, 5)).is_ok());
    assert!(matches!(
        Checkpoint::load_expecting(&path, &cfg(3, 3, 5)),
        Err(Error::ConfigMismatch(_))
    ));
}
