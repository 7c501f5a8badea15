use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::ordered_map;
use crate::tensor::{write_png, Image};

/// A frame triplet with the ground truth halfway between the inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub i1: Image,
    pub gt: Image,
    pub i2: Image,
    /// Motion `[dx, dy]` in pixels from the ground truth to the second frame;
    /// the first frame moved by the negation.
    pub displacement: [f64; 2],
}

fn default_channels() -> usize {
    3
}

fn default_blur() -> f64 {
    1.5
}

/// Translating band-limited noise textures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub samples: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// Largest displacement magnitude; at most `(kernel_size - 1) / 2`.
    pub max_disp: f64,
    /// Smallest displacement magnitude.
    #[serde(default)]
    pub min_disp: f64,
    pub kernel_size: usize,
    /// Standard deviation of the Gaussian that band-limits the noise.
    #[serde(default = "default_blur")]
    pub blur_sigma: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        let reach = ((self.kernel_size - 1) / 2) as f64;
        if !(self.max_disp >= 0.0 && self.max_disp <= reach) {
            return Err(Error::Config(format!(
                "max_disp {} exceeds the kernel reach {reach} of K={}",
                self.max_disp, self.kernel_size
            )));
        }
        if !(self.min_disp >= 0.0 && self.min_disp <= self.max_disp) {
            return Err(Error::Config(format!(
                "min_disp {} must lie in [0, max_disp = {}]",
                self.min_disp, self.max_disp
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("frames must be at least 1x1".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if !(self.blur_sigma > 0.0) {
            return Err(Error::Config("blur_sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Generates `cfg.samples` triplets. Sample `i` depends only on `cfg.seed`
/// and `i`.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<TrainingSample>> {
    cfg.validate()?;
    let ids: Vec<usize> = (0..cfg.samples).collect();
    Ok(ordered_map(&ids, |&i| {
        let mut rng = sample_rng(cfg.seed, i);
        let r = if cfg.max_disp > cfg.min_disp {
            rng.gen_range(cfg.min_disp..=cfg.max_disp)
        } else {
            cfg.max_disp
        };
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        render(cfg, &mut rng, [r * theta.cos(), r * theta.sin()])
    }))
}

/// One sample of the texture stream with a prescribed displacement.
pub fn synth_sample_with(cfg: &SynthConfig, index: usize, displacement: [f64; 2]) -> Result<TrainingSample> {
    cfg.validate()?;
    let reach = ((cfg.kernel_size - 1) / 2) as f64;
    if displacement.iter().any(|d| d.abs() > reach) {
        return Err(Error::Config(format!(
            "displacement {displacement:?} exceeds the kernel reach {reach}"
        )));
    }
    let mut rng = sample_rng(cfg.seed, index);
    let _: (f64, f64) = (rng.gen(), rng.gen());
    Ok(render(cfg, &mut rng, displacement))
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn render(cfg: &SynthConfig, rng: &mut ChaCha8Rng, d: [f64; 2]) -> TrainingSample {
    let reach = d[0].abs().max(d[1].abs()).max(cfg.max_disp);
    let margin = reach.ceil() as usize + 1;
    let (ch, cw) = (cfg.height + 2 * margin, cfg.width + 2 * margin);
    let canvas: Vec<Vec<f64>> = (0..cfg.channels)
        .map(|_| noise_canvas(rng, ch, cw, cfg.blur_sigma))
        .collect();
    let frame = |sx: f64, sy: f64| {
        let mut data = Vec::with_capacity(cfg.channels * cfg.height * cfg.width);
        for plane in &canvas {
            for y in 0..cfg.height {
                for x in 0..cfg.width {
                    let px = (x + margin) as f64 + sx;
                    let py = (y + margin) as f64 + sy;
                    data.push(bilinear(plane, cw, px, py) as f32);
                }
            }
        }
        Image::from_vec(cfg.channels, cfg.height, cfg.width, data).expect("valid frame shape")
    };
    TrainingSample {
        i1: frame(d[0], d[1]),
        gt: frame(0.0, 0.0),
        i2: frame(-d[0], -d[1]),
        displacement: d,
    }
}

/// Gaussian-blurred uniform noise rescaled to `[0.1, 0.9]`.
fn noise_canvas(rng: &mut ChaCha8Rng, h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let t = i as f64 - radius as f64;
            (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / total).collect();
    let (nh, nw) = (h + 2 * radius, w + 2 * radius);
    let noise: Vec<f64> = (0..nh * nw).map(|_| rng.gen::<f64>()).collect();
    let mut rows = vec![0.0; nh * w];
    for y in 0..nh {
        for x in 0..w {
            rows[y * w + x] = taps.iter().enumerate().map(|(i, t)| t * noise[y * nw + x + i]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps.iter().enumerate().map(|(j, t)| t * rows[(y + j) * w + x]).sum();
        }
    }
    let lo = out.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    out.iter_mut().for_each(|v| *v = 0.1 + 0.8 * (*v - lo) / span);
    out
}

fn bilinear(plane: &[f64], w: usize, x: f64, y: f64) -> f64 {
    let h = plane.len() / w;
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as usize, y0 as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let at = |yy: usize, xx: usize| plane[yy * w + xx];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    id: &'a str,
    displacement: [f64; 2],
}

/// Writes `<id>_frame1.png`, `<id>_gt.png`, `<id>_frame2.png` per sample and
/// a `manifest.json` with the displacements.
pub fn write_triplets(dir: impl AsRef<Path>, samples: &[TrainingSample]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let ids: Vec<String> = (0..samples.len()).map(|i| format!("{i:05}")).collect();
    for (id, s) in ids.iter().zip(samples) {
        write_png(&s.i1, dir.join(format!("{id}_frame1.png")))?;
        write_png(&s.gt, dir.join(format!("{id}_gt.png")))?;
        write_png(&s.i2, dir.join(format!("{id}_frame2.png")))?;
    }
    let manifest: Vec<ManifestEntry> = ids
        .iter()
        .zip(samples)
        .map(|(id, s)| ManifestEntry {
            id,
            displacement: s.displacement,
        })
        .collect();
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}
