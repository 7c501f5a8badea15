use std::io::Write;

use sepkern::gradcheck::{run_suite, SuiteConfig, SuiteEntry};

use crate::args::GradcheckArgs;
use crate::exit::CheckFailed;
use crate::run_config::RunConfig;

/// First line of the gradient-check CSV.
pub const GRADCHECK_SCHEMA: &str = "# sepkern gradcheck v1";

fn write_rows(out: &mut impl Write, entries: &[SuiteEntry]) -> std::io::Result<()> {
    writeln!(out, "{GRADCHECK_SCHEMA}")?;
    writeln!(
        out,
        "seed,stage,precision,block,coords,max_rel_err,tolerance,worst_index,worst_analytic,worst_numeric,passed"
    )?;
    for e in entries {
        let r = &e.report;
        writeln!(
            out,
            "{},{},{},{},{},{:.3e},{:.0e},{},{:.9e},{:.9e},{}",
            e.seed,
            e.stage,
            e.precision,
            r.name,
            r.coords,
            r.max_rel_err,
            e.tolerance,
            r.worst_index,
            r.worst_analytic,
            r.worst_numeric,
            e.passed()
        )?;
    }
    Ok(())
}

pub fn run(a: &GradcheckArgs) -> anyhow::Result<()> {
    let cfg = SuiteConfig {
        seeds: vec![a.seed],
        size: a.size,
        kernel_size: a.k,
        levels: a.levels,
        base_channels: a.base_channels,
    };
    eprintln!("fingerprint={}", RunConfig::new("gradcheck", a)?.fingerprint());
    let entries = run_suite(&cfg)?;
    write_rows(&mut std::io::stdout().lock(), &entries)?;

    let repeat = run_suite(&cfg)?;
    let same = entries
        .iter()
        .zip(&repeat)
        .all(|(x, y)| x.report.max_rel_err.to_bits() == y.report.max_rel_err.to_bits());
    if !same {
        return Err(CheckFailed("gradient check is not repeatable".into()).into());
    }

    let failures: Vec<String> = entries
        .iter()
        .filter(|e| !e.passed())
        .map(|e| {
            let r = &e.report;
            format!(
                "{} {} {}[{}]: analytic {:.6e} numeric {:.6e} rel err {:.3e} > {:.0e}",
                e.stage,
                e.precision,
                r.name,
                r.worst_index,
                r.worst_analytic,
                r.worst_numeric,
                r.max_rel_err,
                e.tolerance
            )
        })
        .collect();
    if failures.is_empty() {
        eprintln!("all {} blocks within tolerance", entries.len());
        Ok(())
    } else {
        Err(CheckFailed(format!(
            "{} blocks out of tolerance:\n{}",
            failures.len(),
            failures.join("\n")
        ))
        .into())
    }
}
