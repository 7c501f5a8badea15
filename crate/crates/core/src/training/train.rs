use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::TrainingSample;
use super::features::{make_feature_extractor, FeatureExtractor};
use super::loss::{contextual_loss, l1_loss, LossConfig, LossMode};
use crate::error::{Error, Result};
use crate::kpnet::KPNet;
use crate::parallel::ordered_map;
use crate::pipeline::predict;
use crate::real::Real;
use crate::sepconv::{interpolate_backward, interpolate_tensors};
use crate::tensor::Tensor;

/// Header line of every loss curve CSV.
pub const CURVE_SCHEMA: &str = "# sepkern loss-curve v1";

fn default_momentum() -> f64 {
    0.9
}

fn default_milestones() -> Vec<usize> {
    vec![60, 80]
}

fn default_decay() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

/// Mini-batch SGD with momentum and a step learning-rate schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// The learning rate is multiplied by `lr_decay` after each listed epoch.
    #[serde(default = "default_milestones")]
    pub lr_milestones: Vec<usize>,
    #[serde(default = "default_decay")]
    pub lr_decay: f64,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub kernel_normalization: bool,
    /// Rescale each batch gradient to at most this Euclidean norm.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Stop after the first epoch whose mean loss is at or below this value.
    #[serde(default)]
    pub target_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            learning_rate: 0.02,
            momentum: default_momentum(),
            lr_milestones: default_milestones(),
            lr_decay: default_decay(),
            seed: 0,
            kernel_normalization: true,
            grad_clip: None,
            target_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("lr_milestones must be strictly increasing".into()));
        }
        if let Some(&last) = self.lr_milestones.last() {
            if last == 0 || last >= self.epochs {
                return Err(Error::Config(format!(
                    "lr_milestones must lie in 1..{}, got {last}",
                    self.epochs
                )));
            }
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let halvings = self.lr_milestones.iter().filter(|&&m| m < epoch).count();
        self.learning_rate * self.lr_decay.powi(halvings as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

/// Per-epoch mean training loss.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub records: Vec<EpochRecord>,
}

impl LossCurve {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_loss).collect()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.mean_loss)
    }

    /// First epoch whose mean loss is at or below `target`.
    pub fn first_epoch_reaching(&self, target: f64) -> Option<usize> {
        self.records.iter().find(|r| r.mean_loss <= target).map(|r| r.epoch)
    }

    pub fn write_csv_header(mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{CURVE_SCHEMA}")?;
        writeln!(out, "epoch,mean_loss,lr")
    }

    pub fn write_csv_row(mut out: impl Write, r: &EpochRecord) -> std::io::Result<()> {
        writeln!(out, "{},{:.9e},{:.9e}", r.epoch, r.mean_loss, r.lr)
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        Self::write_csv_header(&mut out)?;
        self.records.iter().try_for_each(|r| Self::write_csv_row(&mut out, r))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: KPNet,
    pub curve: LossCurve,
}

/// Features of the three frames of a sample.
#[derive(Clone, Debug)]
pub struct SampleFeatures<T> {
    pub frame1: Tensor<T>,
    pub frame2: Tensor<T>,
    pub gt: Tensor<T>,
}

impl<T: Real> SampleFeatures<T> {
    pub fn extract(fx: &FeatureExtractor, i1: &Tensor<T>, i2: &Tensor<T>, gt: &Tensor<T>) -> Result<Self> {
        Ok(Self {
            frame1: fx.extract(i1)?,
            frame2: fx.extract(i2)?,
            gt: fx.extract(gt)?,
        })
    }
}

/// Loss of one sample and its gradient with respect to every network
/// parameter. With `features`, the loss is contextual as configured by `lc`:
/// the frame features are synthesized with the same predicted kernels (and the
/// same normalization) as the colors. Without, it is the L1 loss.
pub fn sample_loss_and_gradient<T: Real>(
    net: &KPNet<T>,
    i1: &Tensor<T>,
    i2: &Tensor<T>,
    gt: &Tensor<T>,
    features: Option<&SampleFeatures<T>>,
    lc: &LossConfig,
    kernel_normalization: bool,
) -> Result<(f64, Vec<T>)> {
    let pred = predict(net, i1, i2, kernel_normalization)?;
    let (value, grad_kernels) = match features {
        None => {
            let loss = l1_loss(&pred.output, gt)?;
            (loss.value, interpolate_backward(&pred.synthesis_tape, &loss.grad_pred)?)
        }
        Some(f) => {
            let (pred_features, feature_tape) =
                interpolate_tensors(&f.frame1, &f.frame2, &pred.kernels, kernel_normalization)?;
            let loss = contextual_loss(&pred.output, &pred_features, gt, &f.gt, lc.alpha, lc.reduction)?;
            let mut g = interpolate_backward(&pred.synthesis_tape, &loss.grad_pred)?;
            let grad_features = loss.grad_features.expect("contextual loss yields feature gradients");
            g.add_assign(&interpolate_backward(&feature_tape, &grad_features)?)?;
            (loss.value, g)
        }
    };
    Ok((value, net.backward(&pred.net_tape, &grad_kernels)?))
}

/// [`train_with`] without a per-epoch callback.
pub fn train(net: KPNet, data: &[TrainingSample], tc: &TrainConfig, lc: &LossConfig) -> Result<TrainOutcome> {
    train_with(net, data, tc, lc, |_| {})
}

/// Trains `net` on `data`, calling `on_epoch` after every epoch.
///
/// The sample order of epoch `e` is a permutation drawn from `tc.seed` and
/// `e`. Per-sample gradients of a batch are computed in parallel and summed in
/// batch order, so results do not depend on the worker count.
pub fn train_with(
    mut net: KPNet,
    data: &[TrainingSample],
    tc: &TrainConfig,
    lc: &LossConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    tc.validate()?;
    lc.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let first = &data[0].i1;
    net.config().check_input(first.height(), first.width())?;

    let cached: Option<Vec<SampleFeatures<f32>>> = match lc.mode {
        LossMode::L1 => None,
        LossMode::Contextual => {
            let fx = make_feature_extractor(&lc.features)?;
            let feats = ordered_map(data, |s| {
                SampleFeatures::extract(&fx, s.i1.tensor(), s.i2.tensor(), s.gt.tensor())
            });
            Some(feats.into_iter().collect::<Result<_>>()?)
        }
    };

    let mut velocity = vec![0f32; net.num_params()];
    let mut curve = LossCurve::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=tc.epochs {
        let lr = tc.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let results = ordered_map(batch, |&i| {
                let s = &data[i];
                let f = cached.as_ref().map(|c| &c[i]);
                sample_loss_and_gradient(
                    &net,
                    s.i1.tensor(),
                    s.i2.tensor(),
                    s.gt.tensor(),
                    f,
                    lc,
                    tc.kernel_normalization,
                )
            });
            let mut grad = vec![0f32; net.num_params()];
            for r in results {
                let (loss, g) = r?;
                if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Diverged {
                        epoch,
                        reason: format!("non-finite loss or gradient (loss = {loss})"),
                    });
                }
                loss_sum += loss;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            let mut scale = 1.0 / batch.len() as f64;
            if let Some(clip) = tc.grad_clip {
                let norm = grad.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt() * scale;
                if norm > clip {
                    scale *= clip / norm;
                }
            }
            let scale = scale as f32;
            let (mu, lr) = (tc.momentum as f32, lr as f32);
            for ((p, v), g) in net.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *v = mu * *v + g * scale;
                *p -= lr * *v;
            }
        }
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
            lr,
        };
        if !net.params().iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                reason: "non-finite parameters after update".into(),
            });
        }
        curve.records.push(record);
        on_epoch(&record);
        if tc.target_loss.is_some_and(|t| record.mean_loss <= t) {
            break;
        }
    }
    Ok(TrainOutcome { net, curve })
}
