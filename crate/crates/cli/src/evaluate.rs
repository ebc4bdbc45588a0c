use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use derevrb::config::ExperimentConfig;
use derevrb::io::{format_records, read_records, read_wav, write_records, Record};
use derevrb::metrics::{evaluate_pair, MetricReport};
use rayon::prelude::*;

use crate::args::EvaluateArgs;
use crate::manifest::Manifest;

fn mono(path: &PathBuf, channel: usize) -> Result<Vec<f64>> {
    let a = read_wav(path)?;
    let n = a.num_channels();
    a.channels
        .into_iter()
        .nth(channel)
        .with_context(|| format!("{} has {n} channels, wanted channel {channel}", path.display()))
}

/// Mean FwSNR per iteration over the diagnostics files that report it.
fn iteration_table(files: &[PathBuf]) -> Result<Vec<Record>> {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for f in files {
        for r in read_records(f)? {
            if r.get("record") != Some("iteration") {
                continue;
            }
            if let (Some(i), Some(v)) = (r.parse_field::<usize>("iteration"), r.parse_field::<f64>("fwsnr_db")) {
                let e = sums.entry(i).or_default();
                e.0 += v;
                e.1 += 1;
            }
        }
    }
    Ok(sums
        .into_iter()
        .map(|(i, (s, n))| {
            Record::new()
                .with("record", "iteration_fwsnr")
                .with("iteration", i)
                .with("fwsnr_db", s / n as f64)
                .with("files", n)
        })
        .collect())
}

pub fn run(config: &ExperimentConfig, args: EvaluateArgs) -> Result<()> {
    config.stft.validate()?;
    config.metrics.validate()?;
    let score = |name: &str, reference: &[f64], processed: &[f64]| {
        evaluate_pair(reference, processed, &config.stft, &config.metrics)
            .with_context(|| format!("scoring {name}"))
    };

    let mut report = MetricReport::default();
    let mut diagnostics = args.diagnostics.clone();
    if let Some(manifest_path) = &args.manifest {
        let manifest = Manifest::read(manifest_path)?;
        let ref_ch: usize = manifest.scene.parse_field("reference_channel").unwrap_or(0);
        let scored = manifest
            .entries
            .par_iter()
            .map(|e| -> Result<_> {
                let reference = mono(&e.early, 0)?;
                let processed = match (&args.processed_dir, args.unprocessed) {
                    (_, true) => mono(&e.reverberant, ref_ch)?,
                    (Some(dir), false) => mono(&dir.join(format!("{}.wav", e.name)), 0)?,
                    (None, false) => bail!("--manifest needs --processed-dir or --unprocessed"),
                };
                Ok((e.name.clone(), score(&e.name, &reference, &processed)?))
            })
            .collect::<Result<Vec<_>>>()?;
        for (name, m) in scored {
            report.push(name, m);
        }
        if let Some(dir) = &args.processed_dir {
            diagnostics.extend(
                manifest
                    .entries
                    .iter()
                    .map(|e| dir.join(format!("{}.diag", e.name)))
                    .filter(|p| p.is_file()),
            );
        }
    } else if let (Some(r), Some(p)) = (&args.reference, &args.processed) {
        let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        report.push(name.clone(), score(&name, &mono(r, 0)?, &mono(p, 0)?)?);
    } else if diagnostics.is_empty() {
        bail!("give --reference with --processed, --manifest, or --diagnostics");
    }

    let mut records = if report.utterances.is_empty() { Vec::new() } else { report.to_records() };
    records.extend(iteration_table(&diagnostics)?);
    match &args.output {
        Some(p) => write_records(p, &records)?,
        None => print!("{}", format_records(&records)),
    }
    Ok(())
}
