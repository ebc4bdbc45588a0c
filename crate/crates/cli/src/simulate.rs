use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use derevrb::config::{ExperimentConfig, SceneFile, SceneSource};
use derevrb::io::{read_wav, write_wav, Audio, Record, SampleFormat};
use derevrb::pipeline::simulate;
use derevrb::room_sim::{make_test_corpus, schroeder_rt60};
use rayon::prelude::*;

use crate::args::SimulateArgs;
use crate::manifest::{self, Entry, Manifest};

/// Sorted `*.wav` files of a directory.
pub fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let listing = std::fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))?;
    let mut files = Vec::new();
    for entry in listing {
        let p = entry?.path();
        if p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        bail!("no WAV files in {}", dir.display());
    }
    Ok(files)
}

/// Mono clean utterances of a directory, named after their file stems.
pub fn read_clean_dir(dir: &Path, sample_rate: u32) -> Result<Vec<(String, Vec<f64>)>> {
    wav_files(dir)?
        .into_iter()
        .map(|p| {
            let a = read_wav(&p)?;
            if a.num_channels() != 1 {
                bail!("{} has {} channels; clean speech must be mono", p.display(), a.num_channels());
            }
            if a.sample_rate != sample_rate {
                bail!("{} is sampled at {} Hz, expected {sample_rate}", p.display(), a.sample_rate);
            }
            let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((name, a.channels.into_iter().next().unwrap_or_default()))
        })
        .collect()
}

pub fn run(config: &ExperimentConfig, args: SimulateArgs) -> Result<()> {
    let scene = SceneFile::load(&args.scene).with_context(|| format!("loading scene {}", args.scene.display()))?;
    let rir = scene.rir()?;
    let fs = rir.sample_rate_hz;
    if args.reference_channel >= rir.num_mics() {
        bail!("reference channel {} of {} microphones", args.reference_channel, rir.num_mics());
    }
    let sources = match (&args.clean_dir, args.synthetic) {
        (Some(dir), _) => read_clean_dir(dir, fs)?,
        (None, Some(n)) => {
            if !(args.duration > 0.0) {
                bail!("duration must be positive");
            }
            make_test_corpus(args.seed.unwrap_or(config.seed), n, args.duration, fs)
                .into_iter()
                .enumerate()
                .map(|(i, x)| (format!("utt{i:04}"), x))
                .collect()
        }
        (None, None) => bail!("give --clean-dir or --synthetic"),
    };

    let out = &args.out;
    for sub in ["clean", "reverb", "early"] {
        std::fs::create_dir_all(out.join(sub)).with_context(|| format!("creating {}", out.display()))?;
    }
    write_wav(&out.join("rir.wav"), &rir.to_audio(), SampleFormat::Float32)?;

    let entries: Vec<Entry> = sources
        .par_iter()
        .map(|(name, x)| -> Result<Entry> {
            let sim = simulate(x, &rir, args.reference_channel).with_context(|| format!("simulating {name}"))?;
            let file = format!("{name}.wav");
            let e = Entry {
                name: name.clone(),
                clean: out.join("clean").join(&file),
                reverberant: out.join("reverb").join(&file),
                early: out.join("early").join(&file),
                samples: x.len(),
            };
            write_wav(&e.clean, &Audio::mono(fs, x.clone()), args.format)?;
            write_wav(&e.reverberant, &Audio::new(fs, sim.reverberant)?, args.format)?;
            write_wav(&e.early, &Audio::mono(fs, sim.early_reference), args.format)?;
            log::info!("simulated {name}");
            Ok(e)
        })
        .collect::<Result<_>>()?;

    let kind = match &scene.scene {
        SceneSource::Simulated(_) => "simulated",
        SceneSource::Identity { .. } => "identity",
        SceneSource::Measured { .. } => "measured",
    };
    let mut record = Record::new()
        .with("record", "scene")
        .with("kind", kind)
        .with("mics", rir.num_mics())
        .with("sample_rate", fs)
        .with("reference_channel", args.reference_channel)
        .with("boundary_ms", scene.early_boundary_ms)
        .with("rir", "rir.wav");
    if let SceneSource::Simulated(s) = &scene.scene {
        record.set("rt60_sabine_s", format!("{:.4}", s.sabine_rt60()));
    }
    if let Some(t) = schroeder_rt60(&rir.taps[args.reference_channel], fs) {
        record.set("rt60_schroeder_s", format!("{t:.4}"));
    }
    let manifest_path = out.join(manifest::FILE_NAME);
    Manifest { scene: record, entries }.write(&manifest_path)?;
    println!("{}", manifest_path.display());
    Ok(())
}
