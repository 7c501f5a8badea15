use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kpnet::conv3x3;
use crate::real::Real;
use crate::tensor::{read_skf1_bundle, write_skf1_bundle, Tensor};

/// Width of the seeded random extractor.
pub const RANDOM_FEATURE_WIDTH: usize = 16;

/// Width of the file-loaded extractor, matching the first block of VGG.
pub const FILE_FEATURE_WIDTH: usize = 64;

/// Tensor names expected in an extractor weight bundle.
pub const FEATURE_TENSOR_NAMES: [&str; 4] = ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"];

const INPUT_CHANNELS: usize = 3;

/// Per-channel input standardization applied before the first layer (the
/// ImageNet statistics VGG weights expect). Centering the input also lets the
/// ReLUs of the random stack cut through the data instead of passing it
/// linearly.
pub const FEATURE_INPUT_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const FEATURE_INPUT_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Where the frozen feature extractor comes from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSource {
    RandomConv { seed: u64 },
    File { path: PathBuf },
}

impl Default for FeatureSource {
    fn default() -> Self {
        Self::RandomConv { seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// Frozen two-layer 3x3 conv stack with ReLU after each layer, applied to the
/// standardized input; output keeps the input's spatial size.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    source: FeatureSource,
    layers: [Layer; 2],
}

/// Builds the extractor described by `source`.
pub fn make_feature_extractor(source: &FeatureSource) -> Result<FeatureExtractor> {
    match source {
        FeatureSource::RandomConv { seed } => Ok(FeatureExtractor::random(*seed)),
        FeatureSource::File { path } => FeatureExtractor::load(path),
    }
}

impl FeatureExtractor {
    /// `3 -> 16 -> 16` with He-uniform weights and zero biases.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |cin: usize, cout: usize| {
            let bound = (6.0 / (cin * 9) as f64).sqrt();
            Layer {
                weight: (0..cout * cin * 9).map(|_| rng.gen_range(-bound..bound)).collect(),
                bias: vec![0.0; cout],
            }
        };
        let first = layer(INPUT_CHANNELS, RANDOM_FEATURE_WIDTH);
        let second = layer(RANDOM_FEATURE_WIDTH, RANDOM_FEATURE_WIDTH);
        Self {
            source: FeatureSource::RandomConv { seed },
            layers: [first, second],
        }
    }

    /// Reads a `3 -> 64 -> 64` stack from an SKF1 bundle holding
    /// [`FEATURE_TENSOR_NAMES`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let entries = read_skf1_bundle(path)?;
        let find = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let (_, t) = entries
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::shape(format!("feature bundle lacks tensor {name:?}")))?;
            if t.shape() != shape {
                return Err(Error::shape(format!(
                    "feature tensor {name:?} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t.data().iter().map(|&v| v as f64).collect())
        };
        let w = FILE_FEATURE_WIDTH;
        let first = Layer {
            weight: find("conv1.weight", &[w, INPUT_CHANNELS, 3, 3])?,
            bias: find("conv1.bias", &[w])?,
        };
        let second = Layer {
            weight: find("conv2.weight", &[w, w, 3, 3])?,
            bias: find("conv2.bias", &[w])?,
        };
        Ok(Self {
            source: FeatureSource::File {
                path: path.to_path_buf(),
            },
            layers: [first, second],
        })
    }

    /// Writes the weights in the bundle layout read by [`FeatureExtractor::load`].
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let tensors: Vec<Tensor> = self
            .layers
            .iter()
            .flat_map(|l| {
                let cout = l.bias.len();
                let cin = l.weight.len() / (cout * 9);
                let cast = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
                [
                    Tensor::new(vec![cout, cin, 3, 3], cast(&l.weight)).expect("weight shape"),
                    Tensor::new(vec![cout], cast(&l.bias)).expect("bias shape"),
                ]
            })
            .collect();
        let entries: Vec<(&str, &Tensor)> = FEATURE_TENSOR_NAMES.iter().copied().zip(&tensors).collect();
        write_skf1_bundle(&entries, path)
    }

    pub fn source(&self) -> &FeatureSource {
        &self.source
    }

    pub fn out_channels(&self) -> usize {
        self.layers[1].bias.len()
    }

    /// Side length of the square input window seen by one output feature.
    pub fn receptive_field(&self) -> usize {
        1 + 2 * self.layers.len()
    }

    /// Features of a `[3, H, W]` tensor, `[out_channels, H, W]`.
    pub fn extract<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, _, _) = x.expect_chw("feature input")?;
        if c != INPUT_CHANNELS {
            return Err(Error::shape(format!(
                "feature extractor expects {INPUT_CHANNELS} channels, got {c}"
            )));
        }
        let mut h = x.clone();
        for (ch, (mean, std)) in FEATURE_INPUT_MEAN.iter().zip(FEATURE_INPUT_STD).enumerate() {
            let (m, inv) = (T::of(*mean), T::of(1.0 / std));
            h.plane_mut(ch).iter_mut().for_each(|v| *v = (*v - m) * inv);
        }
        for layer in &self.layers {
            let w: Vec<T> = layer.weight.iter().map(|&v| T::of(v)).collect();
            let b: Vec<T> = layer.bias.iter().map(|&v| T::of(v)).collect();
            h = conv3x3(&h, &w, &b, 1).map(|v| v.max(T::zero()));
        }
        Ok(h)
    }
}

#[cfg(test)]
impl FeatureExtractor {
    /// A file-shaped extractor with seeded weights, for recording fixtures.
    pub(crate) fn random_wide(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |cin: usize, cout: usize| {
            let bound = (6.0 / (cin * 9) as f64).sqrt();
            Layer {
                weight: (0..cout * cin * 9)
                    .map(|_| rng.gen_range(-bound..bound) as f32 as f64)
                    .collect(),
                bias: (0..cout).map(|_| rng.gen_range(-0.1..0.1) as f32 as f64).collect(),
            }
        };
        let first = layer(INPUT_CHANNELS, FILE_FEATURE_WIDTH);
        let second = layer(FILE_FEATURE_WIDTH, FILE_FEATURE_WIDTH);
        Self {
            source: FeatureSource::RandomConv { seed },
            layers: [first, second],
        }
    }
}
