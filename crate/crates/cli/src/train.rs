use anyhow::{Context, Result};
use derevrb::config::ExperimentConfig;
use derevrb::io::{write_records, Record};
use derevrb::neural::{save_model, train, Activation, NetworkKind, NetworkSpec};
use derevrb::pipeline::log_power_frames;
use ndarray::Array2;
use rayon::prelude::*;

use crate::args::TrainArgs;
use crate::simulate::read_clean_dir;

pub fn run(mut config: ExperimentConfig, args: TrainArgs) -> Result<()> {
    let kind: NetworkKind = args.kind.parse()?;
    if let Some(h) = args.hidden {
        config.network.hidden = h;
    }
    if let Some(b) = args.bottleneck {
        let h = &mut config.network.hidden;
        if h.is_empty() {
            h.push(b);
        } else {
            let mid = h.len() / 2;
            h[mid] = b;
        }
    }
    if let Some(a) = args.activation {
        config.network.activation = a;
    }
    if let Some(c) = args.context {
        config.network.fc_context = c;
    }
    let t = &mut config.train;
    t.epochs = args.epochs.unwrap_or(t.epochs);
    t.batch_size = args.batch_size.or(t.batch_size);
    t.optimizer.lr = args.learning_rate.unwrap_or(t.optimizer.lr);
    t.validation_split = args.validation_split.unwrap_or(t.validation_split);
    t.seed = args.seed.unwrap_or(t.seed);
    t.validate()?;
    config.stft.validate()?;

    let activation: Activation = config.network.activation.parse()?;
    let spec = NetworkSpec::with_context(
        kind,
        config.stft.num_bins(),
        &config.network.hidden,
        activation,
        config.network.fc_context,
    );
    spec.validate()?;

    let clean = read_clean_dir(&args.corpus, config.stft.sample_rate_hz)
        .with_context(|| format!("loading corpus {}", args.corpus.display()))?;
    let corpus: Vec<Array2<f64>> = clean
        .par_iter()
        .map(|(name, x)| log_power_frames(x, &config.stft).with_context(|| format!("analysing {name}")))
        .collect::<Result<_>>()?;
    log::info!(
        "training {kind} autoencoder {:?} on {} utterances ({} frames)",
        spec.layer_widths,
        corpus.len(),
        corpus.iter().map(|u| u.nrows()).sum::<usize>()
    );

    let (model, history) = train(&corpus, &spec, &config.train)?;
    save_model(&model, &args.out)?;

    let mut records = vec![Record::new()
        .with("record", "train")
        .with("kind", kind)
        .with("layers", format!("{:?}", spec.layer_widths).replace(' ', ""))
        .with("params", model.network.num_params())
        .with("train_utterances", history.train_utterances)
        .with("validation_utterances", history.validation_utterances)
        .with("initial_loss", history.initial_loss)];
    for (i, tl) in history.train_loss.iter().enumerate() {
        let mut r = Record::new()
            .with("record", "epoch")
            .with("epoch", i + 1)
            .with("train_loss", tl);
        if let Some(v) = history.validation_loss.get(i) {
            r.set("validation_loss", v);
        }
        records.push(r);
    }
    let history_path = args.history.unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".history");
        p.into()
    });
    write_records(&history_path, &records)?;
    if let Some(last) = history.train_loss.last() {
        log::info!("final training loss {last:.4}");
    }
    println!("{}", args.out.display());
    Ok(())
}
