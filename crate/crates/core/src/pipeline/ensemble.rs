use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::interpolate;
use crate::error::{Error, Result};
use crate::kpnet::KPNet;
use crate::parallel::ordered_map;
use crate::real::Real;
use crate::tensor::{Dihedral, Image};

/// Supported ensemble sizes.
pub const ENSEMBLE_COUNTS: [usize; 5] = [1, 2, 4, 8, 16];

/// One input transform of the self-ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnsembleTransform {
    /// Swap the two input frames.
    pub temporal_reverse: bool,
    pub spatial: Dihedral,
}

impl EnsembleTransform {
    pub const IDENTITY: Self = Self {
        temporal_reverse: false,
        spatial: Dihedral::Identity,
    };

    /// The fixed variant order: every spatial element in [`Dihedral::ALL`]
    /// order, first without and then with temporal reversal.
    pub fn ordering() -> [Self; 16] {
        std::array::from_fn(|i| Self {
            temporal_reverse: i % 2 == 1,
            spatial: Dihedral::ALL[i / 2],
        })
    }

    /// Transformed inputs, in the order the network should see them.
    pub fn apply<T: Real>(&self, i1: &Image<T>, i2: &Image<T>) -> (Image<T>, Image<T>) {
        let (a, b) = (i1.transform(self.spatial), i2.transform(self.spatial));
        if self.temporal_reverse {
            (b, a)
        } else {
            (a, b)
        }
    }

    /// Maps a prediction made on transformed inputs back to the original frame.
    pub fn restore<T: Real>(&self, out: &Image<T>) -> Image<T> {
        out.transform(self.spatial.inverse())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Median,
}

impl FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            other => Err(Error::Config(format!(
                "unknown reduction {other:?}, expected mean or median"
            ))),
        }
    }
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::Median => "median",
        })
    }
}

/// How many variants to run (a prefix of [`EnsembleTransform::ordering`]) and
/// how to combine them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    count: usize,
    reduction: Reduction,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            count: 1,
            reduction: Reduction::Mean,
        }
    }
}

impl EnsembleConfig {
    pub fn new(count: usize, reduction: Reduction) -> Result<Self> {
        if !ENSEMBLE_COUNTS.contains(&count) {
            return Err(Error::Config(format!(
                "ensemble count must be one of {ENSEMBLE_COUNTS:?}, got {count}"
            )));
        }
        Ok(Self { count, reduction })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn reduction(&self) -> Reduction {
        self.reduction
    }

    pub fn transforms(&self) -> Vec<EnsembleTransform> {
        EnsembleTransform::ordering()[..self.count].to_vec()
    }
}

/// Runs [`interpolate`] under each configured transform, maps every output
/// back, and reduces per element.
pub fn interpolate_ensemble<T: Real>(
    net: &KPNet<T>,
    i1: &Image<T>,
    i2: &Image<T>,
    cfg: &EnsembleConfig,
    normalized_kernels: bool,
) -> Result<Image<T>> {
    let transforms = cfg.transforms();
    let preds = ordered_map(&transforms, |t| {
        let (a, b) = t.apply(i1, i2);
        interpolate(net, &a, &b, normalized_kernels).map(|out| t.restore(&out))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    reduce_predictions(&preds, cfg.reduction)
}

/// Element-wise mean or median of equally shaped predictions.
///
/// Values are sorted before reduction, so the result does not depend on the
/// order of `preds`. The median of an even count is the midpoint of the two
/// middle values.
pub fn reduce_predictions<T: Real>(preds: &[Image<T>], reduction: Reduction) -> Result<Image<T>> {
    let first = preds
        .first()
        .ok_or_else(|| Error::contract("cannot reduce an empty prediction list"))?;
    for p in &preds[1..] {
        p.tensor().expect_same_shape(first.tensor(), "ensemble predictions")?;
    }
    let n = preds.len();
    let mut out = first.clone();
    let mut column = Vec::with_capacity(n);
    for (idx, v) in out.data_mut().iter_mut().enumerate() {
        column.clear();
        column.extend(preds.iter().map(|p| p.data()[idx].as_f64()));
        column.sort_by(f64::total_cmp);
        let r = match reduction {
            Reduction::Mean => column.iter().sum::<f64>() / n as f64,
            Reduction::Median if n % 2 == 1 => column[n / 2],
            Reduction::Median => (column[n / 2 - 1] + column[n / 2]) / 2.0,
        };
        *v = T::of(r);
    }
    Ok(out)
}
