use serde::{Deserialize, Serialize};

use super::features::FeatureSource;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Default weight of the feature term.
pub const DEFAULT_ALPHA: f64 = 0.1;

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    L1,
    Contextual,
}

/// Denominator of the contextual loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    /// Mean over every color and feature element.
    #[default]
    Concatenation,
    /// Sum over the concatenation divided by the color element count, so the
    /// color term matches the L1 loss in scale.
    ColorCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub mode: LossMode,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub reduction: LossReduction,
    /// Feature extractor for the contextual mode.
    #[serde(default)]
    pub features: FeatureSource,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mode: LossMode::L1,
            alpha: DEFAULT_ALPHA,
            reduction: LossReduction::default(),
            features: FeatureSource::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be finite and non-negative, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Loss value with gradients for the color and feature predictions.
#[derive(Clone, Debug)]
pub struct LossGrad<T> {
    pub value: f64,
    pub grad_pred: Tensor<T>,
    pub grad_features: Option<Tensor<T>>,
}

fn sign<T: Real>(r: f64, scale: f64) -> T {
    if r > 0.0 {
        T::of(scale)
    } else if r < 0.0 {
        T::of(-scale)
    } else {
        T::zero()
    }
}

/// `sum |a - b|` and the residual signs scaled by `scale`.
fn abs_residuals<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, scale: f64) -> (f64, Tensor<T>) {
    let mut total = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    for ((g, p), t) in grad.data_mut().iter_mut().zip(pred.data()).zip(gt.data()) {
        let r = p.as_f64() - t.as_f64();
        total += r.abs();
        *g = sign(r, scale);
    }
    (total, grad)
}

/// Mean absolute error over all elements.
pub fn l1_loss<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<LossGrad<T>> {
    pred.expect_same_shape(gt, "L1 loss operands")?;
    let n = pred.len().max(1) as f64;
    let (total, grad_pred) = abs_residuals(pred, gt, 1.0 / n);
    Ok(LossGrad {
        value: total / n,
        grad_pred,
        grad_features: None,
    })
}

/// Absolute error summed over the concatenation of the color residuals and
/// the `alpha`-scaled feature residuals, divided as `reduction` says.
pub fn contextual_loss<T: Real>(
    pred: &Tensor<T>,
    pred_features: &Tensor<T>,
    gt: &Tensor<T>,
    gt_features: &Tensor<T>,
    alpha: f64,
    reduction: LossReduction,
) -> Result<LossGrad<T>> {
    pred.expect_same_shape(gt, "contextual color operands")?;
    pred_features.expect_same_shape(gt_features, "contextual feature operands")?;
    let (_, h, w) = pred.expect_chw("contextual color prediction")?;
    let (_, fh, fw) = pred_features.expect_chw("contextual feature prediction")?;
    if (h, w) != (fh, fw) {
        return Err(Error::shape(format!("features are {fh}x{fw}, images are {h}x{w}")));
    }
    let n = match reduction {
        LossReduction::Concatenation => pred.len() + pred_features.len(),
        LossReduction::ColorCount => pred.len(),
    }
    .max(1) as f64;
    let (color, grad_pred) = abs_residuals(pred, gt, 1.0 / n);
    let (feature, grad_features) = abs_residuals(pred_features, gt_features, alpha / n);
    Ok(LossGrad {
        value: (color + alpha * feature) / n,
        grad_pred,
        grad_features: Some(grad_features),
    })
}
