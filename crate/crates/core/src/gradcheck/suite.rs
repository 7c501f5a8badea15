//! Gradient checks of the operator, the synthesis step and a small network on
//! random problems, in both precisions.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{central_differences, compare_block, BlockReport, GradCheck};
use crate::error::{Error, Result};
use crate::kpnet::{KPNet, KPNetConfig};
use crate::real::Real;
use crate::sepconv::{
    interpolate_backward, interpolate_tensors, sepconv_backward, sepconv_forward, sepconv_forward_taped,
    SeparableKernelField,
};
use crate::tensor::Tensor;

/// Operator checks use this step; the operator is bilinear, so the
/// fourth-order stencil is exact up to rounding.
const OPERATOR_STEP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

impl Precision {
    /// Largest accepted relative error.
    pub fn tolerance(self) -> f64 {
        match self {
            Precision::F64 => 1e-6,
            Precision::F32 => 1e-3,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteConfig {
    pub seeds: Vec<u64>,
    /// Height and width of every random problem.
    pub size: usize,
    pub kernel_size: usize,
    pub levels: usize,
    pub base_channels: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            size: 8,
            kernel_size: 5,
            levels: 2,
            base_channels: 2,
        }
    }
}

impl SuiteConfig {
    fn network(&self) -> KPNetConfig {
        KPNetConfig {
            levels: self.levels,
            base_channels: self.base_channels,
            kernel_size: self.kernel_size,
            image_channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.size == 0 {
            return Err(Error::Config("size must be positive".into()));
        }
        let net = self.network();
        net.validate()?;
        net.check_input(self.size, self.size)
    }
}

/// One compared block.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteEntry {
    pub seed: u64,
    /// `operator`, `interpolation`, `interpolation_normalized`, `network` or
    /// `zero_upstream` (gradients for an all-zero upstream gradient, which
    /// must vanish exactly).
    pub stage: &'static str,
    pub precision: Precision,
    pub tolerance: f64,
    pub report: BlockReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.passes(self.tolerance)
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn widen<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

fn dot<T: Real>(a: &Tensor<T>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x.as_f64() * y).sum()
}

fn replace(t: &Tensor<f64>, x: &[f64]) -> Tensor<f64> {
    Tensor::new(t.shape().to_vec(), x.to_vec()).expect("same length")
}

/// Runs every check for every seed. Failing blocks are reported, not raised.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<SuiteEntry>> {
    cfg.validate()?;
    let mut entries = Vec::new();
    for &seed in &cfg.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        operator_checks(cfg, seed, &mut rng, &mut entries)?;
        interpolation_checks(cfg, seed, &mut rng, &mut entries)?;
        network_checks(cfg, seed, &mut rng, &mut entries)?;
        zero_upstream_checks(cfg, seed, &mut rng, &mut entries)?;
    }
    Ok(entries)
}

fn operator_checks(cfg: &SuiteConfig, seed: u64, rng: &mut ChaCha8Rng, out: &mut Vec<SuiteEntry>) -> Result<()> {
    let (n, k) = (cfg.size, cfg.kernel_size);
    let padded = uniform(rng, &[3, n + k - 1, n + k - 1], 0.0, 1.0);
    let kh = uniform(rng, &[k, n, n], -0.5, 0.5);
    let kv = uniform(rng, &[k, n, n], -0.5, 0.5);
    let g = uniform(rng, &[3, n, n], -1.0, 1.0);

    let objective = |p: &Tensor<f64>, a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
        dot(&sepconv_forward(p, a, b).expect("valid operands"), &g)
    };
    let numeric = [
        central_differences(
            |x| objective(&replace(&padded, x), &kh, &kv),
            padded.data(),
            OPERATOR_STEP,
        ),
        central_differences(|x| objective(&padded, &replace(&kh, x), &kv), kh.data(), OPERATOR_STEP),
        central_differences(|x| objective(&padded, &kh, &replace(&kv, x)), kv.data(), OPERATOR_STEP),
    ];

    let (_, tape) = sepconv_forward_taped(padded.clone(), &kh, &kv)?;
    let a64 = sepconv_backward(&tape, &g)?;
    let (_, tape) = sepconv_forward_taped(padded.cast::<f32>(), &kh.cast(), &kv.cast())?;
    let a32 = sepconv_backward(&tape, &g.cast())?;
    let analytic = [
        (Precision::F64, [widen(&a64.padded), widen(&a64.kh), widen(&a64.kv)]),
        (Precision::F32, [widen(&a32.padded), widen(&a32.kh), widen(&a32.kv)]),
    ];
    for (precision, blocks) in analytic {
        let floor = match precision {
            Precision::F64 => 0.0,
            Precision::F32 => 1e-3,
        };
        for ((name, a), num) in ["input", "kh", "kv"].into_iter().zip(&blocks).zip(&numeric) {
            out.push(SuiteEntry {
                seed,
                stage: "operator",
                precision,
                tolerance: precision.tolerance(),
                report: compare_block(name, a, num, floor),
            });
        }
    }
    Ok(())
}

fn kink_tolerant(tolerance: f64) -> GradCheck {
    GradCheck {
        steps: vec![1e-4, 1e-5, 1e-6],
        floor_fraction: 1e-3,
        tolerance,
    }
}

fn interpolation_checks(cfg: &SuiteConfig, seed: u64, rng: &mut ChaCha8Rng, out: &mut Vec<SuiteEntry>) -> Result<()> {
    let (n, k) = (cfg.size, cfg.kernel_size);
    let i1 = uniform(rng, &[3, n, n], 0.0, 1.0);
    let i2 = uniform(rng, &[3, n, n], 0.0, 1.0);
    // Positive taps keep the normalization denominator well away from zero.
    let mut field = || uniform(rng, &[k, n, n], 0.05, 0.6);
    let kf = SeparableKernelField::new(field(), field(), field(), field())?;
    let g = uniform(rng, &[3, n, n], -1.0, 1.0);

    for (stage, normalized) in [("interpolation", false), ("interpolation_normalized", true)] {
        let (_, tape) = interpolate_tensors(&i1, &i2, &kf, normalized)?;
        let a64 = interpolate_backward(&tape, &g)?;
        let (_, tape) = interpolate_tensors(&i1.cast::<f32>(), &i2.cast(), &kf.cast(), normalized)?;
        let a32 = interpolate_backward(&tape, &g.cast())?;
        let scale = a64
            .fields()
            .iter()
            .flat_map(|t| t.data())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        for (idx, name) in ["k1h", "k1v", "k2h", "k2v"].into_iter().enumerate() {
            let objective = |x: &[f64]| {
                let mut probe = kf.clone();
                *probe.fields_mut()[idx] = replace(kf.fields()[idx], x);
                let (o, _) = interpolate_tensors(&i1, &i2, &probe, normalized).expect("valid operands");
                dot(&o, &g)
            };
            let x = kf.fields()[idx].data();
            for (precision, a) in [
                (Precision::F64, widen(a64.fields()[idx])),
                (Precision::F32, widen(a32.fields()[idx])),
            ] {
                let report = kink_tolerant(precision.tolerance()).check(name, objective, x, &a, scale);
                out.push(SuiteEntry {
                    seed,
                    stage,
                    precision,
                    tolerance: precision.tolerance(),
                    report,
                });
            }
        }
    }
    Ok(())
}

/// Mean absolute error of the kernel-normalized synthesis and its gradient.
fn network_loss<T: Real>(net: &KPNet<T>, i1: &Tensor<T>, i2: &Tensor<T>, gt: &Tensor<T>) -> Result<(f64, Vec<T>)> {
    let (kf, tape) = net.forward(i1, i2)?;
    let (pred, synth) = interpolate_tensors(i1, i2, &kf, true)?;
    let inv_n = T::of(1.0 / pred.len() as f64);
    let mut loss = 0.0;
    let g = pred.zip_map(gt, |a, b| {
        if a > b {
            inv_n
        } else if a < b {
            -inv_n
        } else {
            T::zero()
        }
    })?;
    for (a, b) in pred.data().iter().zip(gt.data()) {
        loss += (a.as_f64() - b.as_f64()).abs();
    }
    let grad = net.backward(&tape, &interpolate_backward(&synth, &g)?)?;
    Ok((loss / pred.len() as f64, grad))
}

fn network_checks(cfg: &SuiteConfig, seed: u64, rng: &mut ChaCha8Rng, out: &mut Vec<SuiteEntry>) -> Result<()> {
    let n = cfg.size;
    let net = KPNet::<f64>::init(cfg.network(), seed)?;
    let i1 = uniform(rng, &[3, n, n], 0.0, 1.0);
    let i2 = uniform(rng, &[3, n, n], 0.0, 1.0);
    let gt = uniform(rng, &[3, n, n], 0.0, 1.0);
    let (_, a64) = network_loss(&net, &i1, &i2, &gt)?;
    let (_, a32) = network_loss(&net.cast::<f32>(), &i1.cast(), &i2.cast(), &gt.cast())?;
    let a32: Vec<f64> = a32.iter().map(|&v| v as f64).collect();
    let scale = a64.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for spec in net.param_specs() {
        let range = spec.range.clone();
        let objective = |x: &[f64]| {
            let mut params = net.params().to_vec();
            params[range.clone()].copy_from_slice(x);
            let probe = KPNet::from_params(net.config().clone(), seed, params).expect("same length");
            network_loss(&probe, &i1, &i2, &gt).expect("valid problem").0
        };
        let x = &net.params()[range.clone()];
        for (precision, a) in [
            (Precision::F64, &a64[range.clone()]),
            (Precision::F32, &a32[range.clone()]),
        ] {
            let report = kink_tolerant(precision.tolerance()).check(&spec.name, objective, x, a, scale);
            out.push(SuiteEntry {
                seed,
                stage: "network",
                precision,
                tolerance: precision.tolerance(),
                report,
            });
        }
    }
    Ok(())
}

fn zero_upstream_checks(cfg: &SuiteConfig, seed: u64, rng: &mut ChaCha8Rng, out: &mut Vec<SuiteEntry>) -> Result<()> {
    let (n, k) = (cfg.size, cfg.kernel_size);
    let padded = uniform(rng, &[3, n + k - 1, n + k - 1], 0.0, 1.0).cast::<f32>();
    let kh = uniform(rng, &[k, n, n], -0.5, 0.5).cast::<f32>();
    let kv = uniform(rng, &[k, n, n], -0.5, 0.5).cast::<f32>();
    let (_, tape) = sepconv_forward_taped(padded, &kh, &kv)?;
    let op = sepconv_backward(&tape, &Tensor::zeros(&[3, n, n]))?;

    let net = KPNet::<f32>::init(cfg.network(), seed)?;
    let i1 = uniform(rng, &[3, n, n], 0.0, 1.0).cast::<f32>();
    let i2 = uniform(rng, &[3, n, n], 0.0, 1.0).cast::<f32>();
    let (kf, tape) = net.forward(&i1, &i2)?;
    let params = net.backward(&tape, &SeparableKernelField::zeros(k, kf.height(), kf.width()))?;

    let blocks = [
        ("input", widen(&op.padded)),
        ("kh", widen(&op.kh)),
        ("kv", widen(&op.kv)),
        ("params", params.iter().map(|&v| v as f64).collect()),
    ];
    for (name, grad) in blocks {
        out.push(SuiteEntry {
            seed,
            stage: "zero_upstream",
            precision: Precision::F32,
            tolerance: 0.0,
            report: compare_block(name, &grad, &vec![0.0; grad.len()], 0.0),
        });
    }
    Ok(())
}
