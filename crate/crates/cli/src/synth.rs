use anyhow::Context;

use sepkern::training::{synth_dataset, write_triplets, SynthConfig};

use crate::args::SynthArgs;
use crate::run_config::RunConfig;

pub fn run(a: &SynthArgs) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        samples: a.samples,
        height: a.size.height,
        width: a.size.width,
        channels: 3,
        max_disp: a.max_disp,
        min_disp: a.min_disp,
        kernel_size: a.k,
        blur_sigma: a.blur_sigma,
        seed: a.seed,
    };
    let samples = synth_dataset(&cfg)?;
    write_triplets(&a.out, &samples).with_context(|| format!("writing triplets to {}", a.out.display()))?;
    println!("fingerprint={}", RunConfig::new("synth", &cfg)?.fingerprint());
    println!("samples={}", samples.len());
    Ok(())
}
