use serde::Serialize;

use super::dataset::TrainingSample;
use crate::error::Result;
use crate::kpnet::KPNet;
use crate::pipeline::{compute_norm_stats, interpolate};
use crate::real::Real;
use crate::sepconv::SeparableKernelField;
use crate::tensor::{psnr, Image, Tensor};

/// Kernel mass below this magnitude has no meaningful centroid.
const MASS_EPS: f64 = 1e-9;

/// Fraction of interior pixels whose kernel centroid lies within one pixel of
/// the true motion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LocalizationReport {
    pub pixels: usize,
    /// Frame-1 kernels judged against `-d`.
    pub frame1_fraction: f64,
    /// Frame-2 kernels judged against `+d`.
    pub frame2_fraction: f64,
}

impl LocalizationReport {
    /// Mean of the two per-frame fractions.
    pub fn fraction(&self) -> f64 {
        (self.frame1_fraction + self.frame2_fraction) / 2.0
    }
}

/// Offset of the mass centroid of a 1-D kernel from its center tap.
fn centroid_1d<T: Real>(k: &Tensor<T>, p: usize) -> Option<f64> {
    let (taps, h, w) = k.chw();
    let center = (taps / 2) as f64;
    let d = k.data();
    let (mut mass, mut moment) = (0.0, 0.0);
    for t in 0..taps {
        let v = d[t * h * w + p].as_f64();
        mass += v;
        moment += v * t as f64;
    }
    (mass.abs() >= MASS_EPS).then(|| moment / mass - center)
}

/// Localization of a kernel field for motion `d = [dx, dy]`. Pixels closer
/// than `(K - 1) / 2` to the border are excluded.
pub fn kernel_localization<T: Real>(kf: &SeparableKernelField<T>, d: [f64; 2]) -> LocalizationReport {
    let (h, w) = (kf.height(), kf.width());
    let pad = (kf.kernel_size() - 1) / 2;
    let mut hits = [0usize; 2];
    let mut pixels = 0;
    for y in pad..h.saturating_sub(pad) {
        for x in pad..w.saturating_sub(pad) {
            let p = y * w + x;
            pixels += 1;
            let frames = [(&kf.k1h, &kf.k1v, -1.0), (&kf.k2h, &kf.k2v, 1.0)];
            for (slot, (kh, kv, sign)) in hits.iter_mut().zip(frames) {
                if let (Some(cx), Some(cy)) = (centroid_1d(kh, p), centroid_1d(kv, p)) {
                    if (cx - sign * d[0]).hypot(cy - sign * d[1]) <= 1.0 {
                        *slot += 1;
                    }
                }
            }
        }
    }
    let frac = |n: usize| {
        if pixels == 0 {
            0.0
        } else {
            n as f64 / pixels as f64
        }
    };
    LocalizationReport {
        pixels,
        frame1_fraction: frac(hits[0]),
        frame2_fraction: frac(hits[1]),
    }
}

/// Runs the network on a synthetic sample and reports how well its kernels
/// follow the known displacement.
pub fn motion_localization_report(net: &KPNet, sample: &TrainingSample) -> Result<LocalizationReport> {
    let stats = compute_norm_stats(&sample.i1, &sample.i2)?;
    let (kf, _) = net.forward(&stats.apply(sample.i1.tensor())?, &stats.apply(sample.i2.tensor())?)?;
    Ok(kernel_localization(&kf, sample.displacement))
}

/// The trivial interpolator `(i1 + i2) / 2`.
pub fn frame_average<T: Real>(i1: &Image<T>, i2: &Image<T>) -> Result<Image<T>> {
    let half = T::of(0.5);
    i1.zip_map(i2, |a, b| (a + b) * half)
}

/// PSNR of the network and of the frame-average baseline on each sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QualityReport {
    pub model_psnr: Vec<f64>,
    pub baseline_psnr: Vec<f64>,
}

impl QualityReport {
    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    pub fn mean_model(&self) -> f64 {
        Self::mean(&self.model_psnr)
    }

    pub fn mean_baseline(&self) -> f64 {
        Self::mean(&self.baseline_psnr)
    }
}

/// Evaluates `net` against the frame average on `samples` (peak 1).
pub fn evaluate_quality(net: &KPNet, samples: &[TrainingSample], kernel_normalization: bool) -> Result<QualityReport> {
    let mut model_psnr = Vec::with_capacity(samples.len());
    let mut baseline_psnr = Vec::with_capacity(samples.len());
    for s in samples {
        let out = interpolate(net, &s.i1, &s.i2, kernel_normalization)?;
        model_psnr.push(psnr(&out, &s.gt, 1.0)?);
        baseline_psnr.push(psnr(&frame_average(&s.i1, &s.i2)?, &s.gt, 1.0)?);
    }
    Ok(QualityReport {
        model_psnr,
        baseline_psnr,
    })
}
