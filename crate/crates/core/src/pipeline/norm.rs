use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Image, Tensor};

/// Lower bound on the per-channel standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Per-channel mean and standard deviation of two frames pooled together.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Maps every channel of a `[C, H, W]` tensor to zero mean and unit
    /// deviation under these statistics.
    pub fn apply<T: Real>(&self, t: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, _, _) = t.expect_chw("normalized frame")?;
        if c != self.mean.len() {
            return Err(Error::shape(format!(
                "statistics cover {} channels, frame has {c}",
                self.mean.len()
            )));
        }
        let mut out = t.clone();
        for ch in 0..c {
            let (mu, sigma) = (self.mean[ch], self.std[ch]);
            for v in out.plane_mut(ch) {
                *v = T::of((v.as_f64() - mu) / sigma);
            }
        }
        Ok(out)
    }
}

/// Joint statistics of both frames, two-pass in 64-bit with population
/// variance. Deviations below [`SIGMA_FLOOR`] are replaced by it.
pub fn compute_norm_stats<T: Real>(i1: &Image<T>, i2: &Image<T>) -> Result<NormalizationStats> {
    norm_stats_tensors(i1.tensor(), i2.tensor())
}

pub(crate) fn norm_stats_tensors<T: Real>(i1: &Tensor<T>, i2: &Tensor<T>) -> Result<NormalizationStats> {
    let (c, h, w) = i1.expect_chw("first frame")?;
    i1.expect_same_shape(i2, "normalization frames")?;
    let n = (2 * h * w) as f64;
    let mut mean = Vec::with_capacity(c);
    let mut std = Vec::with_capacity(c);
    for ch in 0..c {
        let samples = || i1.plane(ch).iter().chain(i2.plane(ch)).map(|v| v.as_f64());
        let mu = samples().sum::<f64>() / n;
        let var = samples().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        mean.push(mu);
        std.push(var.sqrt().max(SIGMA_FLOOR));
    }
    Ok(NormalizationStats { mean, std })
}
