use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use derevrb::config::ExperimentConfig;
use derevrb::io::{read_wav, read_wav_channels, write_records, write_wav, Audio, Record, SampleFormat};
use derevrb::metrics::{apply_lag, best_lag, fwsnr};
use derevrb::neural::load_model;
use derevrb::pipeline::dereverberate;
use derevrb::wpe::MclpConfig;
use derevrb::PsdEstimator;
use rayon::prelude::*;

use crate::args::{DereverbArgs, OrderArg};
use crate::manifest::Manifest;

/// Resolved run settings; everything is checked before audio is read.
struct Job {
    config: ExperimentConfig,
    mics: Option<Vec<usize>>,
    prior: Box<dyn PsdEstimator>,
    format: SampleFormat,
}

fn prepare(mut config: ExperimentConfig, args: &DereverbArgs) -> Result<Job> {
    if let Some(p) = &args.prior {
        config.prior.name = p.clone();
    }
    if let Some(m) = &args.model {
        config.prior.model = Some(m.clone());
    }
    if let Some(o) = args.ar_order {
        config.prior.ar_order = o;
    }
    let mclp = &mut config.mclp;
    if let Some(m) = &args.mics {
        if m.is_empty() {
            bail!("--mics lists no microphones");
        }
        mclp.num_channels = m.len();
    } else if let Some(n) = args.channels {
        mclp.num_channels = n;
    }
    match args.order {
        Some(OrderArg::Auto) => mclp.order = MclpConfig::order_for_channels(mclp.num_channels),
        Some(OrderArg::Fixed(l)) => mclp.order = l,
        None => {}
    }
    mclp.delay = args.delay.unwrap_or(mclp.delay);
    mclp.max_iterations = args.iterations.unwrap_or(mclp.max_iterations);
    mclp.reference_channel = args.reference.unwrap_or(mclp.reference_channel);
    config.validate()?;

    let kind = config.prior.kind()?;
    let model = match (&config.prior.model, kind.needs_model()) {
        (Some(p), true) => Some(load_model(p).with_context(|| format!("loading model {}", p.display()))?),
        _ => None,
    };
    if let Some(m) = &model {
        if m.num_bins() != config.stft.num_bins() {
            bail!(
                "model expects {} frequency bins, STFT yields {}",
                m.num_bins(),
                config.stft.num_bins()
            );
        }
    }
    let prior = kind.build(config.mclp.gamma_floor_rel, config.prior.ar_order, model)?;
    Ok(Job {
        config,
        mics: args.mics.clone(),
        prior,
        format: args.format,
    })
}

impl Job {
    fn select(&self, audio: Audio) -> Result<Vec<Vec<f64>>> {
        if audio.sample_rate != self.config.stft.sample_rate_hz {
            bail!(
                "input sampled at {} Hz, configuration expects {}",
                audio.sample_rate,
                self.config.stft.sample_rate_hz
            );
        }
        let available = audio.num_channels();
        let mut channels = audio.channels;
        let picked = match &self.mics {
            Some(mics) => {
                if let Some(&bad) = mics.iter().find(|&&m| m >= available) {
                    bail!("microphone {bad} requested, input has {available}");
                }
                mics.iter().map(|&m| channels[m].clone()).collect()
            }
            None => {
                let n = self.config.mclp.num_channels;
                if n > available {
                    bail!("{n} channels requested, input has {available}");
                }
                channels.truncate(n);
                channels
            }
        };
        Ok(picked)
    }

    fn run_record(&self) -> Record {
        let c = &self.config.mclp;
        let mut r = Record::new()
            .with("record", "run")
            .with("prior", self.prior.name())
            .with("channels", c.num_channels)
            .with("order", c.order)
            .with("delay", c.delay)
            .with("iterations", c.max_iterations)
            .with("reference", c.reference_channel);
        if let Some(m) = &self.mics {
            let list: Vec<String> = m.iter().map(|v| v.to_string()).collect();
            r.set("mics", list.join(","));
        }
        r
    }

    /// Dereverberates one recording; returns the output and its diagnostics
    /// records, with per-iteration FwSNR when `early` is given.
    fn process(&self, audio: Audio, early: Option<&[f64]>) -> Result<(Audio, Vec<Record>)> {
        let fs = audio.sample_rate;
        let channels = self.select(audio)?;
        let c = &self.config;
        let out = dereverberate(&channels, &c.stft, &c.mclp, self.prior.as_ref(), early.is_some())?;
        let mut records = vec![self.run_record()];
        for (i, d) in out.diagnostics.iter().enumerate() {
            let mut r = Record::new()
                .with("record", "iteration")
                .with("iteration", d.iteration)
                .with("nll", d.negative_log_likelihood)
                .with("residual_energy", d.residual_energy);
            if let (Some(reference), Some(y)) = (early, out.per_iteration.get(i)) {
                let max_lag = c.metrics.align_frames * c.stft.hop;
                let lag = if max_lag > 0 { best_lag(reference, y, max_lag) } else { 0 };
                let (a, b) = apply_lag(reference, y, lag);
                r.set("fwsnr_db", fwsnr(a, b, &c.stft, &c.metrics)?.mean_db);
            }
            records.push(r);
        }
        Ok((Audio::mono(fs, out.output), records))
    }
}

fn diag_path_for(output: &Path) -> PathBuf {
    output.with_extension("diag")
}

pub fn run(config: ExperimentConfig, args: DereverbArgs) -> Result<()> {
    let job = prepare(config, &args)?;
    if let Some(manifest_path) = &args.manifest {
        let Some(out_dir) = &args.out_dir else {
            bail!("--manifest needs --out-dir");
        };
        let manifest = Manifest::read(manifest_path)?;
        std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        manifest
            .entries
            .par_iter()
            .map(|e| -> Result<()> {
                let early = read_wav(&e.early)?;
                let early = early.channels.first().context("empty early reference")?;
                let (audio, records) = job
                    .process(read_wav(&e.reverberant)?, Some(early))
                    .with_context(|| format!("processing {}", e.name))?;
                let out = out_dir.join(format!("{}.wav", e.name));
                write_wav(&out, &audio, job.format)?;
                write_records(&diag_path_for(&out), &records)?;
                log::info!("dereverberated {}", e.name);
                Ok(())
            })
            .collect::<Result<Vec<()>>>()?;
        println!("{}", out_dir.display());
        return Ok(());
    }

    let Some(output) = &args.output else {
        bail!("--input needs --output");
    };
    if args.input.is_empty() {
        bail!("give --input or --manifest");
    }
    let audio = if args.input.len() == 1 {
        read_wav(&args.input[0])?
    } else {
        read_wav_channels(&args.input)?
    };
    let early = match &args.early_reference {
        Some(p) => Some(read_wav(p)?.channels.into_iter().next().context("empty early reference")?),
        None => None,
    };
    let (y, records) = job.process(audio, early.as_deref())?;
    write_wav(output, &y, job.format)?;
    if let Some(d) = &args.diagnostics {
        write_records(d, &records)?;
    }
    println!("{}", output.display());
    Ok(())
}
