use std::fs::File;
use std::io::Write;
use std::time::Instant;

use anyhow::Context;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use sepkern::kpnet::{KPNet, KPNetConfig};
use sepkern::pipeline::{interpolate_ensemble, interpolate_with, EnsembleConfig, InferenceOptions, Padding, Reduction};
use sepkern::{Image, Tensor};

use crate::args::BenchArgs;
use crate::exit::Usage;
use crate::run_config::RunConfig;

/// First line of the benchmark CSV.
pub const BENCH_SCHEMA: &str = "# sepkern bench v1";

/// Timing summary of one mode.
#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub mode: String,
    pub height: usize,
    pub width: usize,
    pub kernel_size: usize,
    pub network_pixels: usize,
    pub reps: u32,
    pub median_ms: f64,
    pub mean_ms: f64,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::new(Tensor::from_fn(&[3, h, w], |_| rng.gen_range(0.0..1.0f32))).expect("three channels")
}

fn time_ms<R>(f: impl FnOnce() -> R) -> (R, f64) {
    let start = Instant::now();
    let r = f();
    (r, start.elapsed().as_secs_f64() * 1e3)
}

/// `num/den` and its value, e.g. `315844/262144=1.2048492431640625`.
pub fn pixel_ratio_text(legacy: usize, delayed: usize) -> String {
    format!("{legacy}/{delayed}={}", legacy as f64 / delayed as f64)
}

pub fn run(a: &BenchArgs) -> anyhow::Result<()> {
    let (h, w, k) = (a.size.height, a.size.width, a.k);
    if k < 3 || k % 2 == 0 {
        return Err(Usage(format!("--k must be odd and at least 3, got {k}")).into());
    }
    let ensemble = a
        .ensemble
        .map(|n| EnsembleConfig::new(n, Reduction::Mean))
        .transpose()
        .map_err(|e| Usage(e.to_string()))?;
    let config = KPNetConfig {
        levels: a.levels,
        base_channels: a.base_channels,
        kernel_size: k,
        image_channels: 3,
    };
    let net = KPNet::<f32>::init(config, a.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (i1, i2) = (random_frame(&mut rng, h, w), random_frame(&mut rng, h, w));
    let opts = |padding| InferenceOptions {
        kernel_normalization: true,
        padding,
    };
    let (delayed_opts, legacy_opts) = (opts(Padding::Delayed), opts(Padding::Legacy));

    // Warm-up runs also validate sizes and report the network input sizes.
    let delayed_pixels = interpolate_with(&net, &i1, &i2, &delayed_opts)?.network_pixels;
    let legacy_pixels = interpolate_with(&net, &i1, &i2, &legacy_opts)?.network_pixels;

    let mut delayed_ms = Vec::new();
    let mut legacy_ms = Vec::new();
    for rep in 0..a.reps {
        // Alternate the order so drift affects both modes alike.
        let order = if rep % 2 == 0 { [false, true] } else { [true, false] };
        for legacy in order {
            let (o, sink) = if legacy {
                (&legacy_opts, &mut legacy_ms)
            } else {
                (&delayed_opts, &mut delayed_ms)
            };
            let (r, ms) = time_ms(|| interpolate_with(&net, &i1, &i2, o));
            r?;
            sink.push(ms);
        }
    }
    let row = |mode: String, pixels: usize, ms: &[f64]| BenchRow {
        mode,
        height: h,
        width: w,
        kernel_size: k,
        network_pixels: pixels,
        reps: a.reps,
        median_ms: median(ms),
        mean_ms: mean(ms),
    };
    let mut rows = vec![
        row("delayed".into(), delayed_pixels, &delayed_ms),
        row("legacy".into(), legacy_pixels, &legacy_ms),
    ];
    if let Some(cfg) = ensemble {
        let mut ms = Vec::new();
        for _ in 0..a.reps {
            let (r, t) = time_ms(|| interpolate_ensemble(&net, &i1, &i2, &cfg, true));
            r?;
            ms.push(t);
        }
        rows.push(row(
            format!("ensemble{}", cfg.count()),
            cfg.count() * delayed_pixels,
            &ms,
        ));
    }

    let sink: Box<dyn Write> = match &a.csv {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut sink = std::io::BufWriter::new(sink);
    writeln!(sink, "{BENCH_SCHEMA}")?;
    let mut csv = csv::Writer::from_writer(sink);
    for r in &rows {
        csv.serialize(r)?;
    }
    csv.flush()?;

    eprintln!("fingerprint={}", RunConfig::new("bench", a)?.fingerprint());
    eprintln!("pixel_ratio={}", pixel_ratio_text(legacy_pixels, delayed_pixels));
    eprintln!(
        "time_ratio_legacy_over_delayed median={:.4} mean={:.4}",
        rows[1].median_ms / rows[0].median_ms,
        rows[1].mean_ms / rows[0].mean_ms
    );
    if let Some(e) = rows.get(2) {
        eprintln!(
            "ensemble_cost_over_single median={:.4}",
            e.median_ms / rows[0].median_ms
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_text_is_exact() {
        assert_eq!(
            pixel_ratio_text(562 * 562, 512 * 512),
            "315844/262144=1.2048492431640625"
        );
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mean(&[1.0, 2.0]), 1.5);
    }
}
