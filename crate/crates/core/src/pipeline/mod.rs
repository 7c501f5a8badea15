//! End-to-end frame synthesis: joint input normalization, kernel prediction on
//! unpadded frames, padding at kernel application, and self-ensembling.

mod ensemble;
mod norm;

pub use ensemble::{
    interpolate_ensemble, reduce_predictions, EnsembleConfig, EnsembleTransform, Reduction, ENSEMBLE_COUNTS,
};
pub use norm::{compute_norm_stats, NormalizationStats, SIGMA_FLOOR};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kpnet::{ActivationTape, KPNet};
use crate::real::Real;
use crate::sepconv::{interpolate_forward, interpolate_tensors, InterpolationTape, SeparableKernelField};
use crate::tensor::{center_crop, replicate_pad, Image, Tensor};

/// Where the frames are padded relative to the kernel prediction network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// The network sees the `H x W` frames; padding happens when the kernels
    /// are applied.
    #[default]
    Delayed,
    /// The network sees frames already padded by `(K - 1) / 2` and its
    /// kernel fields are center cropped. Kept for benchmarking.
    Legacy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceOptions {
    pub kernel_normalization: bool,
    pub padding: Padding,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            kernel_normalization: true,
            padding: Padding::Delayed,
        }
    }
}

/// Synthesized frame plus the number of pixels per channel that entered the
/// kernel prediction network.
#[derive(Clone, Debug)]
pub struct Interpolation<T> {
    pub image: Image<T>,
    pub network_pixels: usize,
}

/// Everything a training step needs to backpropagate through one synthesis.
#[derive(Clone, Debug)]
pub struct Prediction<T> {
    pub output: Tensor<T>,
    pub kernels: SeparableKernelField<T>,
    pub net_tape: ActivationTape<T>,
    pub synthesis_tape: InterpolationTape<T>,
}

/// Synthesizes the frame halfway between `i1` and `i2`.
pub fn interpolate<T: Real>(
    net: &KPNet<T>,
    i1: &Image<T>,
    i2: &Image<T>,
    normalized_kernels: bool,
) -> Result<Image<T>> {
    let opts = InferenceOptions {
        kernel_normalization: normalized_kernels,
        padding: Padding::Delayed,
    };
    Ok(interpolate_with(net, i1, i2, &opts)?.image)
}

/// [`interpolate`] with explicit padding mode and network-input accounting.
pub fn interpolate_with<T: Real>(
    net: &KPNet<T>,
    i1: &Image<T>,
    i2: &Image<T>,
    opts: &InferenceOptions,
) -> Result<Interpolation<T>> {
    let (a, b) = (i1.tensor(), i2.tensor());
    let (kernels, network_pixels) = match opts.padding {
        Padding::Delayed => {
            let (kernels, _, pixels) = predict_kernels(net, a, b)?;
            (kernels, pixels)
        }
        Padding::Legacy => predict_kernels_legacy(net, a, b)?,
    };
    let out = interpolate_forward(a, b, &kernels, opts.kernel_normalization)?;
    Ok(Interpolation {
        image: Image::new(out)?,
        network_pixels,
    })
}

/// Taped forward pass through normalization, the network and the synthesis.
pub fn predict<T: Real>(
    net: &KPNet<T>,
    i1: &Tensor<T>,
    i2: &Tensor<T>,
    normalized_kernels: bool,
) -> Result<Prediction<T>> {
    let (kernels, net_tape, _) = predict_kernels(net, i1, i2)?;
    let (output, synthesis_tape) = interpolate_tensors(i1, i2, &kernels, normalized_kernels)?;
    Ok(Prediction {
        output,
        kernels,
        net_tape,
        synthesis_tape,
    })
}

fn predict_kernels<T: Real>(
    net: &KPNet<T>,
    i1: &Tensor<T>,
    i2: &Tensor<T>,
) -> Result<(SeparableKernelField<T>, ActivationTape<T>, usize)> {
    let stats = norm::norm_stats_tensors(i1, i2)?;
    let (n1, n2) = (stats.apply(i1)?, stats.apply(i2)?);
    let (_, h, w) = n1.chw();
    let (kernels, tape) = net.forward(&n1, &n2)?;
    Ok((kernels, tape, h * w))
}

fn predict_kernels_legacy<T: Real>(
    net: &KPNet<T>,
    i1: &Tensor<T>,
    i2: &Tensor<T>,
) -> Result<(SeparableKernelField<T>, usize)> {
    let stats = norm::norm_stats_tensors(i1, i2)?;
    let pad = (net.config().kernel_size - 1) / 2;
    let n1 = stats.apply(&replicate_pad(i1, pad))?;
    let n2 = stats.apply(&replicate_pad(i2, pad))?;
    let (_, h, w) = n1.chw();
    let (wide, _) = net.forward(&n1, &n2)?;
    let [k1h, k1v, k2h, k2v] = wide.fields().map(|k| center_crop(k, pad));
    Ok((SeparableKernelField::new(k1h?, k1v?, k2h?, k2v?)?, h * w))
}

/// Largest deviation tolerated by [`affine_invariance_probe`].
pub const AFFINE_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AffineProbeReport {
    pub gain: f64,
    pub offset: f64,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares `interpolate(a*i1 + b, a*i2 + b)` against
/// `a * interpolate(i1, i2) + b` with kernel normalization on.
pub fn affine_invariance_probe<T: Real>(
    net: &KPNet<T>,
    i1: &Image<T>,
    i2: &Image<T>,
    gain: f64,
    offset: f64,
) -> Result<AffineProbeReport> {
    if !(gain > 0.0) {
        return Err(Error::contract(format!("affine gain must be positive, got {gain}")));
    }
    let (a, b) = (T::of(gain), T::of(offset));
    let base = interpolate(net, i1, i2, true)?.affine(a, b);
    let moved = interpolate(net, &i1.affine(a, b), &i2.affine(a, b), true)?;
    let max_deviation = base.max_abs_diff(&moved);
    Ok(AffineProbeReport {
        gain,
        offset,
        max_deviation,
        tolerance: AFFINE_TOLERANCE,
        passed: max_deviation <= AFFINE_TOLERANCE,
    })
}
