use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use sepkern::kpnet::{Checkpoint, KPNet, KPNetConfig, TrainingMeta};
use sepkern::training::{synth_dataset, train_with, LossConfig, LossCurve, SynthConfig, TrainConfig, TrainingSample};

use crate::args::TrainArgs;
use crate::eval::discover;
use crate::exit::{Data, Usage};
use crate::interpolate::load_frame;
use crate::run_config::RunConfig;

/// Source of training triplets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    Synthetic(SynthConfig),
    /// A triplet directory as read by `eval`. Displacements come from its
    /// `manifest.json` when present and are zero otherwise.
    Triplets {
        dir: PathBuf,
    },
}

/// Contents of the `--config` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub model: KPNetConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub loss: LossConfig,
    pub data: DataSpec,
}

impl TrainFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| Usage(format!("reading config {}", path.display())))?;
        serde_json::from_str(&text).with_context(|| Usage(format!("parsing config {}", path.display())))
    }
}

fn manifest_displacements(dir: &Path) -> anyhow::Result<Vec<(String, [f64; 2])>> {
    #[derive(Deserialize)]
    struct Entry {
        id: String,
        displacement: [f64; 2],
    }
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(&path)?;
    let entries: Vec<Entry> =
        serde_json::from_str(&text).with_context(|| Data(format!("parsing {}", path.display())))?;
    Ok(entries.into_iter().map(|e| (e.id, e.displacement)).collect())
}

fn load_triplets(dir: &Path) -> anyhow::Result<Vec<TrainingSample>> {
    let (triplets, incomplete) = discover(dir)?;
    for id in &incomplete {
        eprintln!("warning: skipping triplet {id}: missing frame1, gt or frame2");
    }
    let displacements = manifest_displacements(dir)?;
    triplets
        .iter()
        .map(|t| {
            let displacement = displacements
                .iter()
                .find(|(id, _)| *id == t.id)
                .map_or([0.0; 2], |(_, d)| *d);
            Ok(TrainingSample {
                i1: load_frame(&t.frame1)?,
                gt: load_frame(&t.gt)?,
                i2: load_frame(&t.frame2)?,
                displacement,
            })
        })
        .collect()
}

pub fn run(a: &TrainArgs) -> anyhow::Result<()> {
    let cfg = TrainFile::load(&a.config)?;
    let fingerprint = RunConfig::new("train", &cfg)?.fingerprint();
    let data = match &cfg.data {
        DataSpec::Synthetic(sc) => synth_dataset(sc)?,
        DataSpec::Triplets { dir } => load_triplets(dir)?,
    };
    if data.is_empty() {
        return Err(Data("training set is empty".into()).into());
    }
    let net = KPNet::init(cfg.model.clone(), cfg.train.seed)?;
    println!("fingerprint={fingerprint}");
    println!("samples={} params={}", data.len(), net.num_params());

    let file = File::create(&a.curve).with_context(|| format!("creating {}", a.curve.display()))?;
    let mut curve_out = BufWriter::new(file);
    LossCurve::write_csv_header(&mut curve_out)?;
    curve_out.flush()?;
    let mut write_error = None;
    let outcome = train_with(net, &data, &cfg.train, &cfg.loss, |r| {
        let written = LossCurve::write_csv_row(&mut curve_out, r).and_then(|_| curve_out.flush());
        if let Err(e) = written {
            write_error.get_or_insert(e);
        }
        eprintln!("epoch {} loss {:.6e} lr {:.3e}", r.epoch, r.mean_loss, r.lr);
    });
    if let Some(e) = write_error {
        return Err(anyhow::Error::new(e).context(format!("writing {}", a.curve.display())));
    }
    let outcome = outcome?;

    let meta = TrainingMeta {
        epoch: outcome.curve.records.len() as u32,
        loss_history: outcome.curve.losses().iter().map(|&v| v as f32).collect(),
    };
    let final_loss = outcome.curve.final_loss().unwrap_or(f64::NAN);
    Checkpoint { net: outcome.net, meta }
        .save(&a.out)
        .with_context(|| format!("writing checkpoint {}", a.out.display()))?;
    println!("epochs={} final_loss={final_loss:.6e}", outcome.curve.records.len());
    Ok(())
}
