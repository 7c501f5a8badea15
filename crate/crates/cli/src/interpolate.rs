use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;

use sepkern::kpnet::{Checkpoint, KPNet};
use sepkern::pipeline::{interpolate_ensemble, interpolate_with, EnsembleConfig, InferenceOptions, Padding};
use sepkern::tensor::{format_psnr, psnr, read_png, write_png};
use sepkern::Image;

use crate::args::{EnsembleArgs, InterpolateArgs};
use crate::exit::{Data, Usage};
use crate::run_config::{file_digest, RunConfig};

/// Inference settings that determine the synthesized pixels.
#[derive(Clone, Debug, Serialize)]
pub struct InferenceSettings {
    pub checkpoint: String,
    pub kernel_size: usize,
    pub kernel_normalization: bool,
    pub padding: Padding,
    pub ensemble: EnsembleConfig,
}

impl InferenceSettings {
    pub fn new(checkpoint: &Path, net: &KPNet, ens: &EnsembleArgs, legacy: bool) -> anyhow::Result<Self> {
        let ensemble = EnsembleConfig::new(ens.ensemble, ens.reduce).map_err(|e| Usage(e.to_string()))?;
        if legacy && ensemble.count() > 1 {
            return Err(Usage("--legacy-padding cannot be combined with --ensemble above 1".into()).into());
        }
        Ok(Self {
            checkpoint: file_digest(checkpoint)?,
            kernel_size: net.config().kernel_size,
            kernel_normalization: !ens.no_kernel_norm,
            padding: if legacy { Padding::Legacy } else { Padding::Delayed },
            ensemble,
        })
    }

    pub fn synthesize(&self, net: &KPNet, i1: &Image, i2: &Image) -> sepkern::Result<Image> {
        match self.padding {
            Padding::Legacy => {
                let opts = InferenceOptions {
                    kernel_normalization: self.kernel_normalization,
                    padding: Padding::Legacy,
                };
                Ok(interpolate_with(net, i1, i2, &opts)?.image)
            }
            Padding::Delayed => interpolate_ensemble(net, i1, i2, &self.ensemble, self.kernel_normalization),
        }
    }
}

pub fn load_checkpoint(path: &Path) -> anyhow::Result<KPNet> {
    Ok(Checkpoint::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?
        .net)
}

pub fn load_frame(path: &Path) -> anyhow::Result<Image> {
    read_png(path).with_context(|| Data(format!("reading frame {}", path.display())))
}

pub fn run(a: &InterpolateArgs) -> anyhow::Result<()> {
    let net = load_checkpoint(&a.checkpoint)?;
    let settings = InferenceSettings::new(&a.checkpoint, &net, &a.ensemble, a.legacy_padding)?;
    let i1 = load_frame(&a.frame1)?;
    let i2 = load_frame(&a.frame2)?;
    let reference = match &a.gt {
        Some(p) => (load_frame(p)?, "gt"),
        None => (i1.clone(), "frame1"),
    };

    let start = Instant::now();
    let out = settings.synthesize(&net, &i1, &i2)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    write_png(&out, &a.out).with_context(|| format!("writing {}", a.out.display()))?;

    let fingerprint = RunConfig::new("interpolate", &settings)?.fingerprint();
    println!("time_ms={ms:.3}");
    println!("fingerprint={fingerprint}");
    println!(
        "psnr_vs_{}_db={}",
        reference.1,
        format_psnr(psnr(&out, &reference.0, 1.0)?)
    );
    Ok(())
}
