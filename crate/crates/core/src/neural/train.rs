use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{normalize_with, stack_context, AdaDeltaParams, AdaDeltaState, AutoencoderModel};
use super::{Batch, Network, NetworkKind, NetworkSpec};
use crate::error::{Error, Result};

const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Frames per batch for FC stacks, utterances per batch for LSTM stacks.
    /// `None` selects 64 frames or 8 utterances.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Fraction of utterances held out for validation.
    pub validation_split: f64,
    pub optimizer: AdaDeltaParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: None,
            seed: 0,
            validation_split: 0.1,
            optimizer: AdaDeltaParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_split) {
            return Err(Error::InvalidConfig(
                "validation split must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    fn batch_size_for(&self, kind: NetworkKind) -> usize {
        self.batch_size.unwrap_or(match kind {
            NetworkKind::Fc => 64,
            NetworkKind::Lstm => 8,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    /// Training-set loss of the initialized network, before any update.
    pub initial_loss: f64,
    /// Sample-weighted mean of the batch losses seen during each epoch.
    pub train_loss: Vec<f64>,
    /// Held-out loss after each epoch; empty without a validation split.
    pub validation_loss: Vec<f64>,
    pub train_utterances: usize,
    pub validation_utterances: usize,
}

/// Per-bin mean and standard deviation of log-power frames.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mu: Array1<f64>,
    pub sigma: Array1<f64>,
    /// Bins whose deviation was raised to the floor.
    pub floored_bins: usize,
}

impl NormStats {
    pub fn compute(utterances: &[ArrayView2<'_, f64>]) -> Result<Self> {
        let bins = utterances.first().ok_or(Error::EmptyCorpus)?.ncols();
        let mut sum = Array1::<f64>::zeros(bins);
        let mut count = 0usize;
        for u in utterances {
            if u.ncols() != bins {
                return Err(Error::DimensionMismatch(format!(
                    "utterance has {} bins, expected {bins}",
                    u.ncols()
                )));
            }
            sum += &u.sum_axis(Axis(0));
            count += u.nrows();
        }
        if count == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mu = sum / count as f64;
        let mut var = Array1::<f64>::zeros(bins);
        for u in utterances {
            for row in u.rows() {
                let d = &row - &mu;
                var += &(&d * &d);
            }
        }
        var /= count as f64;
        let mut floored_bins = 0;
        let sigma = var.mapv(|v| {
            let s = v.sqrt();
            if s < SIGMA_FLOOR {
                floored_bins += 1;
                SIGMA_FLOOR
            } else {
                s
            }
        });
        if floored_bins > 0 {
            log::warn!("{floored_bins} bins have near-zero variance; sigma floored at {SIGMA_FLOOR}");
        }
        Ok(NormStats {
            mu,
            sigma,
            floored_bins,
        })
    }
}

enum Dataset {
    Frames {
        inputs: Array2<f64>,
        targets: Array2<f64>,
    },
    Sequences(Vec<Array2<f64>>),
}

impl Dataset {
    fn build(normalized: &[Array2<f64>], spec: &NetworkSpec) -> Self {
        match spec.kind {
            NetworkKind::Fc if normalized.is_empty() => Dataset::Frames {
                inputs: Array2::zeros((0, spec.input_width())),
                targets: Array2::zeros((0, spec.num_bins())),
            },
            NetworkKind::Fc => {
                let stacked: Vec<Array2<f64>> = normalized
                    .iter()
                    .map(|u| stack_context(u.view(), spec.fc_context))
                    .collect();
                let inputs = concatenate(
                    Axis(0),
                    &stacked.iter().map(|a| a.view()).collect::<Vec<_>>(),
                )
                .expect("uniform widths");
                let targets = concatenate(
                    Axis(0),
                    &normalized.iter().map(|a| a.view()).collect::<Vec<_>>(),
                )
                .expect("uniform widths");
                Dataset::Frames { inputs, targets }
            }
            NetworkKind::Lstm => Dataset::Sequences(normalized.to_vec()),
        }
    }

    fn items(&self) -> usize {
        match self {
            Dataset::Frames { inputs, .. } => inputs.nrows(),
            Dataset::Sequences(s) => s.len(),
        }
    }

    fn batch(&self, idx: &[usize]) -> Batch {
        match self {
            Dataset::Frames { inputs, targets } => Batch::Frames {
                inputs: inputs.select(Axis(0), idx),
                targets: targets.select(Axis(0), idx),
            },
            Dataset::Sequences(s) => {
                let views: Vec<_> = idx.iter().map(|&i| s[i].view()).collect();
                Batch::from_sequences(&views)
            }
        }
    }

    /// Number of loss rows the batch contributes.
    fn weight(&self, idx: &[usize]) -> usize {
        match self {
            Dataset::Frames { .. } => idx.len(),
            Dataset::Sequences(s) => idx.iter().map(|&i| s[i].nrows()).sum(),
        }
    }

    fn loss(&self, model: &AutoencoderModel, batch_size: usize) -> Result<f64> {
        let order: Vec<usize> = (0..self.items()).collect();
        let (mut total, mut rows) = (0.0, 0usize);
        for chunk in order.chunks(batch_size.max(1)) {
            let w = self.weight(chunk);
            total += model.batch_loss(&self.batch(chunk))? * w as f64;
            rows += w;
        }
        Ok(if rows == 0 { 0.0 } else { total / rows as f64 })
    }
}

/// Trains an autoencoder on utterances of log-power frames (dB,
/// `frames x bins`); targets equal inputs.
///
/// Normalization statistics are computed over the training utterances and
/// frozen into the returned model, whose parameters are rounded to `f32`.
pub fn train(
    corpus: &[Array2<f64>],
    spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<(AutoencoderModel, TrainHistory)> {
    config.validate()?;
    spec.validate()?;
    if corpus.is_empty() || corpus.iter().all(|u| u.nrows() == 0) {
        return Err(Error::EmptyCorpus);
    }
    for u in corpus {
        if u.ncols() != spec.num_bins() {
            return Err(Error::DimensionMismatch(format!(
                "corpus frames have {} bins, network expects {}",
                u.ncols(),
                spec.num_bins()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((config.validation_split * corpus.len() as f64).round() as usize)
        .min(corpus.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    train_idx.sort_unstable();
    let mut val_idx = val_idx.to_vec();
    val_idx.sort_unstable();

    let train_views: Vec<_> = train_idx.iter().map(|&i| corpus[i].view()).collect();
    let stats = NormStats::compute(&train_views)?;
    let norm = |idx: &[usize]| -> Vec<Array2<f64>> {
        idx.iter()
            .map(|&i| normalize_with(corpus[i].view(), stats.mu.view(), stats.sigma.view()))
            .collect()
    };
    let train_set = Dataset::build(&norm(&train_idx), spec);
    let val_set = Dataset::build(&norm(&val_idx), spec);

    let network = Network::init(spec, config.seed.wrapping_add(0x5eed))?;
    let mut model = AutoencoderModel::new(spec.clone(), network, stats.mu, stats.sigma)?;
    let sizes: Vec<usize> = model.network.tensors().iter().map(|t| t.len()).collect();
    let mut optimizer = AdaDeltaState::new(config.optimizer, &sizes);
    let batch_size = config.batch_size_for(spec.kind);
    let eval_batch = match spec.kind {
        NetworkKind::Fc => batch_size.max(1024),
        NetworkKind::Lstm => batch_size,
    };

    let mut history = TrainHistory {
        initial_loss: train_set.loss(&model, eval_batch)?,
        train_loss: Vec::with_capacity(config.epochs),
        validation_loss: Vec::new(),
        train_utterances: train_idx.len(),
        validation_utterances: val_idx.len(),
    };

    let mut items: Vec<usize> = (0..train_set.items()).collect();
    for epoch in 0..config.epochs {
        items.shuffle(&mut rng);
        let (mut total, mut rows) = (0.0, 0usize);
        for chunk in items.chunks(batch_size) {
            let batch = train_set.batch(chunk);
            let (output, cache) = model.forward_train(&batch)?;
            let (loss, grads) = model.backward(&batch, &output, Some(&cache))?;
            let grad_tensors = grads.tensors();
            optimizer.step(&mut model.network.tensors_mut(), &grad_tensors)?;
            let w = train_set.weight(chunk);
            total += loss * w as f64;
            rows += w;
        }
        let epoch_loss = total / rows.max(1) as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        history.train_loss.push(epoch_loss);
        if val_set.items() > 0 {
            history
                .validation_loss
                .push(val_set.loss(&model, eval_batch)?);
        }
        log::debug!("epoch {epoch}: train {epoch_loss:.6}");
    }
    model.quantize_to_f32();
    Ok((model, history))
}
