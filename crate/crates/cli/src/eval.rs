use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;

use sepkern::parallel::ordered_map;
use sepkern::tensor::{format_psnr, psnr};

use crate::args::EvalArgs;
use crate::exit::Data;
use crate::interpolate::{load_checkpoint, load_frame, InferenceSettings};
use crate::run_config::RunConfig;

/// First line of every evaluation CSV.
pub const EVAL_SCHEMA: &str = "# sepkern eval v1";

const MEMBERS: [&str; 3] = ["frame1", "gt", "frame2"];

/// Paths of one complete triplet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub id: String,
    pub frame1: PathBuf,
    pub gt: PathBuf,
    pub frame2: PathBuf,
}

/// One evaluated sample. `ms` is excluded from determinism comparisons.
#[derive(Clone, Debug, Serialize)]
pub struct EvalRecord {
    pub id: String,
    pub psnr_db: String,
    pub ms: String,
    pub fingerprint: String,
}

/// Complete triplets of `dir` sorted by id, plus the ids with missing members.
pub fn discover(dir: &Path) -> anyhow::Result<(Vec<Triplet>, Vec<String>)> {
    let entries = std::fs::read_dir(dir).with_context(|| Data(format!("reading directory {}", dir.display())))?;
    let mut groups: BTreeMap<String, [Option<PathBuf>; 3]> = BTreeMap::new();
    for entry in entries {
        let path = entry?.path();
        let Some(stem) = path
            .extension()
            .filter(|e| *e == "png")
            .and(path.file_stem())
            .and_then(|s| s.to_str())
        else {
            continue;
        };
        let Some((id, member)) = stem.rsplit_once('_') else {
            continue;
        };
        if let Some(slot) = MEMBERS.iter().position(|m| *m == member) {
            groups.entry(id.to_string()).or_default()[slot] = Some(path.clone());
        }
    }
    let mut complete = Vec::new();
    let mut incomplete = Vec::new();
    for (id, members) in groups {
        match members {
            [Some(frame1), Some(gt), Some(frame2)] => complete.push(Triplet { id, frame1, gt, frame2 }),
            _ => incomplete.push(id),
        }
    }
    Ok((complete, incomplete))
}

pub fn run(a: &EvalArgs) -> anyhow::Result<()> {
    let net = load_checkpoint(&a.checkpoint)?;
    let settings = InferenceSettings::new(&a.checkpoint, &net, &a.ensemble, false)?;
    let fingerprint = RunConfig::new("eval", &settings)?.fingerprint();

    let (triplets, incomplete) = discover(&a.dir)?;
    for id in &incomplete {
        eprintln!("warning: skipping triplet {id}: missing frame1, gt or frame2");
    }
    if triplets.is_empty() {
        return Err(Data(format!("no complete triplets in {}", a.dir.display())).into());
    }

    let results = ordered_map(&triplets, |t| -> anyhow::Result<(f64, f64)> {
        let (i1, gt, i2) = (load_frame(&t.frame1)?, load_frame(&t.gt)?, load_frame(&t.frame2)?);
        let start = Instant::now();
        let out = settings
            .synthesize(&net, &i1, &i2)
            .with_context(|| format!("triplet {}", t.id))?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        Ok((psnr(&out, &gt, 1.0)?, ms))
    });

    let sink: Box<dyn Write> = match &a.csv {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut sink = std::io::BufWriter::new(sink);
    writeln!(sink, "{EVAL_SCHEMA}")?;
    let mut csv = csv::Writer::from_writer(sink);
    let mut total = 0.0;
    for (t, r) in triplets.iter().zip(results) {
        let (db, ms) = r?;
        total += db;
        csv.serialize(EvalRecord {
            id: t.id.clone(),
            psnr_db: format_psnr(db),
            ms: format!("{ms:.3}"),
            fingerprint: fingerprint.clone(),
        })?;
    }
    csv.flush()?;
    eprintln!(
        "mean_psnr_db={} triplets={} skipped={}",
        format_psnr(total / triplets.len() as f64),
        triplets.len(),
        incomplete.len()
    );
    Ok(())
}
