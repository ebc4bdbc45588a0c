//! Spectral autoencoder used as a desired-signal PSD prior.
//!
//! The network maps normalized log-power frames to their reconstruction.
//! Two layer stacks are supported: a fully connected stack fed with a
//! context window of neighbouring frames, and an LSTM stack that consumes
//! one frame per step. Hidden layers share one activation; the output layer
//! is always linear.

mod adadelta;
mod format;
mod layers;
mod train;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adadelta::{adadelta_step, AdaDeltaParams, AdaDeltaState};
pub use format::{load_model, read_model, save_model, write_model, FORMAT_VERSION, MAGIC};
pub use layers::{
    dense_backward, dense_forward, lstm_backward, lstm_forward, Dense, DenseCache, LstmCache,
    LstmLayer,
};
pub use train::{train, NormStats, TrainConfig, TrainHistory};

/// Exponential linear unit with `alpha = 1`.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Elu,
    Relu,
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => elu(x),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Linear => x,
        }
    }

    /// Derivative at pre-activation `x`, given `y = apply(x)`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Linear => 1.0,
        }
    }

    pub(crate) fn tag(self) -> u32 {
        match self {
            Activation::Elu => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Sigmoid => 3,
            Activation::Linear => 4,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Option<Self> {
        Some(match tag {
            0 => Activation::Elu,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Sigmoid,
            4 => Activation::Linear,
            _ => return None,
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "elu" => Ok(Activation::Elu),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::InvalidConfig(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Elu => "elu",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkKind {
    Fc,
    Lstm,
}

impl FromStr for NetworkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fc" => Ok(NetworkKind::Fc),
            "lstm" => Ok(NetworkKind::Lstm),
            other => Err(Error::InvalidConfig(format!("unknown network kind `{other}`"))),
        }
    }
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetworkKind::Fc => "fc",
            NetworkKind::Lstm => "lstm",
        })
    }
}

/// Architecture of an autoencoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    /// `[input, hidden..., output]`
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    /// Frames of context on each side (FC only).
    pub fc_context: usize,
}

pub const DEFAULT_HIDDEN: [usize; 3] = [512, 48, 512];
pub const DEFAULT_FC_CONTEXT: usize = 2;

impl NetworkSpec {
    /// Spec for `num_bins`-wide frames with the given hidden widths, eLU
    /// hidden units and a context of two frames each side for FC stacks.
    pub fn new(kind: NetworkKind, num_bins: usize, hidden: &[usize]) -> Self {
        let fc_context = match kind {
            NetworkKind::Fc => DEFAULT_FC_CONTEXT,
            NetworkKind::Lstm => 0,
        };
        Self::with_context(kind, num_bins, hidden, Activation::Elu, fc_context)
    }

    pub fn with_context(
        kind: NetworkKind,
        num_bins: usize,
        hidden: &[usize],
        activation: Activation,
        fc_context: usize,
    ) -> Self {
        let input = match kind {
            NetworkKind::Fc => num_bins * (2 * fc_context + 1),
            NetworkKind::Lstm => num_bins,
        };
        let mut layer_widths = vec![input];
        layer_widths.extend_from_slice(hidden);
        layer_widths.push(num_bins);
        NetworkSpec {
            kind,
            layer_widths,
            activation,
            fc_context: if kind == NetworkKind::Fc { fc_context } else { 0 },
        }
    }

    /// 512 / `bottleneck` / 512 hidden units over 257 bins.
    pub fn default_for(kind: NetworkKind, bottleneck: usize) -> Self {
        let hidden = [DEFAULT_HIDDEN[0], bottleneck, DEFAULT_HIDDEN[2]];
        Self::new(kind, 257, &hidden)
    }

    pub fn num_bins(&self) -> usize {
        *self.layer_widths.last().unwrap_or(&0)
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths.first().copied().unwrap_or(0)
    }

    pub fn hidden_widths(&self) -> &[usize] {
        let n = self.layer_widths.len();
        if n < 2 {
            &[]
        } else {
            &self.layer_widths[1..n - 1]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.layer_widths.len() < 2 || self.layer_widths.iter().any(|&w| w == 0) {
            return bad(format!("invalid layer widths {:?}", self.layer_widths));
        }
        let expected = match self.kind {
            NetworkKind::Fc => self.num_bins() * (2 * self.fc_context + 1),
            NetworkKind::Lstm => self.num_bins(),
        };
        if self.input_width() != expected {
            return bad(format!(
                "input width {} inconsistent with {} bins (expected {expected})",
                self.input_width(),
                self.num_bins()
            ));
        }
        if self.kind == NetworkKind::Lstm && self.layer_widths.len() < 3 {
            return bad("an LSTM stack needs at least one recurrent layer".into());
        }
        if self.kind == NetworkKind::Lstm && self.fc_context != 0 {
            return bad("context stacking applies to FC stacks only".into());
        }
        Ok(())
    }
}

/// Parameters of a layer stack. Also used to hold gradients.
#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Fc(Vec<Dense>),
    Lstm { cells: Vec<LstmLayer>, output: Dense },
}

impl Network {
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = &spec.layer_widths;
        Ok(match spec.kind {
            NetworkKind::Fc => Network::Fc(
                w.windows(2)
                    .map(|p| Dense::glorot(p[0], p[1], &mut rng))
                    .collect(),
            ),
            NetworkKind::Lstm => {
                let n = w.len();
                let cells = w[..n - 1]
                    .windows(2)
                    .map(|p| LstmLayer::glorot(p[0], p[1], &mut rng))
                    .collect();
                let output = Dense::glorot(w[n - 2], w[n - 1], &mut rng);
                Network::Lstm { cells, output }
            }
        })
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        let w = &spec.layer_widths;
        match spec.kind {
            NetworkKind::Fc => Network::Fc(w.windows(2).map(|p| Dense::zeros(p[0], p[1])).collect()),
            NetworkKind::Lstm => {
                let n = w.len();
                Network::Lstm {
                    cells: w[..n - 1]
                        .windows(2)
                        .map(|p| LstmLayer::zeros(p[0], p[1]))
                        .collect(),
                    output: Dense::zeros(w[n - 2], w[n - 1]),
                }
            }
        }
    }

    /// Every parameter tensor in a fixed order, flattened row-major.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        match self {
            Network::Fc(layers) => {
                for d in layers {
                    out.push(d.weight.as_slice().expect("contiguous"));
                    out.push(d.bias.as_slice().expect("contiguous"));
                }
            }
            Network::Lstm { cells, output } => {
                for c in cells {
                    out.push(c.w_input.as_slice().expect("contiguous"));
                    out.push(c.w_recurrent.as_slice().expect("contiguous"));
                    out.push(c.bias.as_slice().expect("contiguous"));
                }
                out.push(output.weight.as_slice().expect("contiguous"));
                out.push(output.bias.as_slice().expect("contiguous"));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        match self {
            Network::Fc(layers) => {
                for d in layers.iter_mut() {
                    out.push(d.weight.as_slice_mut().expect("contiguous"));
                    out.push(d.bias.as_slice_mut().expect("contiguous"));
                }
            }
            Network::Lstm { cells, output } => {
                for c in cells.iter_mut() {
                    out.push(c.w_input.as_slice_mut().expect("contiguous"));
                    out.push(c.w_recurrent.as_slice_mut().expect("contiguous"));
                    out.push(c.bias.as_slice_mut().expect("contiguous"));
                }
                out.push(output.weight.as_slice_mut().expect("contiguous"));
                out.push(output.bias.as_slice_mut().expect("contiguous"));
            }
        }
        out
    }

    /// Shapes matching [`Network::tensors`].
    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        match self {
            Network::Fc(layers) => {
                for d in layers {
                    out.push(d.weight.shape().to_vec());
                    out.push(d.bias.shape().to_vec());
                }
            }
            Network::Lstm { cells, output } => {
                for c in cells {
                    out.push(c.w_input.shape().to_vec());
                    out.push(c.w_recurrent.shape().to_vec());
                    out.push(c.bias.shape().to_vec());
                }
                out.push(output.weight.shape().to_vec());
                out.push(output.bias.shape().to_vec());
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Checks tensor shapes against `spec`.
    pub fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        let reference = Network::zeros(spec);
        let same_kind = matches!(
            (self, &reference),
            (Network::Fc(_), Network::Fc(_)) | (Network::Lstm { .. }, Network::Lstm { .. })
        );
        if !same_kind || self.tensor_shapes() != reference.tensor_shapes() {
            return Err(Error::DimensionMismatch(format!(
                "parameter shapes do not match layer widths {:?}",
                spec.layer_widths
            )));
        }
        Ok(())
    }
}

/// Cached activations from a training forward pass.
#[derive(Debug, Clone)]
pub enum ForwardCache {
    Fc(DenseCache),
    Lstm(LstmCache),
}

/// A batch of already normalized training samples.
#[derive(Debug, Clone)]
pub enum Batch {
    /// Rows are context-stacked inputs; targets are the centre frames.
    Frames {
        inputs: Array2<f64>,
        targets: Array2<f64>,
    },
    /// Time-major padded sequences: row `t * batch + b`.
    Sequences {
        inputs: Array2<f64>,
        targets: Array2<f64>,
        lengths: Vec<usize>,
        steps: usize,
    },
}

impl Batch {
    pub fn targets(&self) -> &Array2<f64> {
        match self {
            Batch::Frames { targets, .. } | Batch::Sequences { targets, .. } => targets,
        }
    }

    /// Row validity mask (padding rows are excluded from the loss).
    pub fn valid_rows(&self) -> Vec<bool> {
        match self {
            Batch::Frames { targets, .. } => vec![true; targets.nrows()],
            Batch::Sequences { lengths, steps, .. } => {
                let b = lengths.len();
                (0..steps * b).map(|r| r / b < lengths[r % b]).collect()
            }
        }
    }

    /// Builds a padded time-major batch from `(frames x bins)` sequences;
    /// targets equal inputs.
    pub fn from_sequences(seqs: &[ArrayView2<'_, f64>]) -> Self {
        let batch = seqs.len();
        let steps = seqs.iter().map(|s| s.nrows()).max().unwrap_or(0);
        let bins = seqs.first().map(|s| s.ncols()).unwrap_or(0);
        let mut inputs = Array2::zeros((steps * batch, bins));
        for (b, seq) in seqs.iter().enumerate() {
            for (t, row) in seq.rows().into_iter().enumerate() {
                inputs.row_mut(t * batch + b).assign(&row);
            }
        }
        Batch::Sequences {
            targets: inputs.clone(),
            inputs,
            lengths: seqs.iter().map(|s| s.nrows()).collect(),
            steps,
        }
    }
}

/// Masked mean squared error over valid rows and all outputs.
pub fn mse(output: &Array2<f64>, targets: &Array2<f64>, valid: &[bool]) -> f64 {
    let rows = valid.iter().filter(|v| **v).count();
    if rows == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for (r, ok) in valid.iter().enumerate() {
        if *ok {
            for (y, t) in output.row(r).iter().zip(targets.row(r)) {
                total += (y - t) * (y - t);
            }
        }
    }
    total / (rows * output.ncols()) as f64
}

/// Replicates edge frames so row `t` holds frames `t-c ..= t+c`.
pub fn stack_context(frames: ArrayView2<'_, f64>, context: usize) -> Array2<f64> {
    let (n, bins) = frames.dim();
    let width = 2 * context + 1;
    let mut out = Array2::zeros((n, bins * width));
    for t in 0..n {
        for j in 0..width {
            let src = (t + j).saturating_sub(context).min(n.saturating_sub(1));
            out.slice_mut(ndarray::s![t, j * bins..(j + 1) * bins])
                .assign(&frames.row(src));
        }
    }
    out
}

/// Per-bin power to dB with a relative floor of `1e-12` of the peak power.
pub fn log_power_db(power: ArrayView2<'_, f64>) -> Array2<f64> {
    let peak = power.iter().cloned().fold(0.0f64, f64::max);
    let delta = (1e-12 * peak).max(f64::MIN_POSITIVE);
    power.mapv(|p| 10.0 * (p.max(0.0) + delta).log10())
}

/// A trained autoencoder together with its frozen normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub spec: NetworkSpec,
    pub network: Network,
    pub norm_mu: Array1<f64>,
    pub norm_sigma: Array1<f64>,
}

impl AutoencoderModel {
    pub fn new(
        spec: NetworkSpec,
        network: Network,
        norm_mu: Array1<f64>,
        norm_sigma: Array1<f64>,
    ) -> Result<Self> {
        let model = AutoencoderModel {
            spec,
            network,
            norm_mu,
            norm_sigma,
        };
        model.validate()?;
        Ok(model)
    }

    /// Randomly initialized network with identity normalization.
    pub fn random(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let network = Network::init(&spec, seed)?;
        let bins = spec.num_bins();
        Self::new(spec, network, Array1::zeros(bins), Array1::ones(bins))
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.network.check_against(&self.spec)?;
        let bins = self.spec.num_bins();
        if self.norm_mu.len() != bins || self.norm_sigma.len() != bins {
            return Err(Error::DimensionMismatch(format!(
                "normalization vectors must have {bins} entries"
            )));
        }
        if self.norm_sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidConfig("norm_sigma must be positive".into()));
        }
        if !self.network.is_finite() || self.norm_mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.spec.num_bins()
    }

    /// `(L - mu) / sigma` per bin.
    pub fn normalize(&self, log_power: ArrayView2<'_, f64>) -> Array2<f64> {
        normalize_with(log_power, self.norm_mu.view(), self.norm_sigma.view())
    }

    /// `sigma * y + mu` per bin (back to dB).
    pub fn denormalize(&self, normalized: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = normalized.to_owned();
        for mut row in out.rows_mut() {
            row *= &self.norm_sigma;
            row += &self.norm_mu;
        }
        out
    }

    /// Runs the network over one utterance of normalized frames
    /// `(frames x bins)`.
    pub fn reconstruct(&self, normalized: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if normalized.ncols() != self.num_bins() {
            return Err(Error::DimensionMismatch(format!(
                "frames have {} bins, model expects {}",
                normalized.ncols(),
                self.num_bins()
            )));
        }
        if !self.network.is_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        let act = self.spec.activation;
        Ok(match &self.network {
            Network::Fc(layers) => {
                let x = stack_context(normalized, self.spec.fc_context);
                // bounded chunks keep the activations small for long inputs
                let mut out = Array2::zeros((x.nrows(), self.num_bins()));
                let chunk = 1024;
                let mut start = 0;
                while start < x.nrows() {
                    let end = (start + chunk).min(x.nrows());
                    let (y, _) =
                        dense_forward(layers, act, x.slice(ndarray::s![start..end, ..]), false);
                    out.slice_mut(ndarray::s![start..end, ..]).assign(&y);
                    start = end;
                }
                out
            }
            Network::Lstm { cells, output } => {
                let (y, _) =
                    lstm_forward(cells, output, act, normalized, normalized.nrows(), 1, false);
                y
            }
        })
    }

    /// Forward pass over a training batch, keeping the cache for backward.
    pub fn forward_train(&self, batch: &Batch) -> Result<(Array2<f64>, ForwardCache)> {
        let act = self.spec.activation;
        match (&self.network, batch) {
            (Network::Fc(layers), Batch::Frames { inputs, .. }) => {
                check_width(inputs, self.spec.input_width())?;
                let (y, c) = dense_forward(layers, act, inputs.view(), true);
                Ok((y, ForwardCache::Fc(c.expect("cache requested"))))
            }
            (
                Network::Lstm { cells, output },
                Batch::Sequences {
                    inputs,
                    lengths,
                    steps,
                    ..
                },
            ) => {
                check_width(inputs, self.spec.input_width())?;
                let (y, c) =
                    lstm_forward(cells, output, act, inputs.view(), *steps, lengths.len(), true);
                Ok((y, ForwardCache::Lstm(c.expect("cache requested"))))
            }
            _ => Err(Error::DimensionMismatch(
                "batch layout does not match network kind".into(),
            )),
        }
    }

    /// Mean-squared-error loss and its exact parameter gradients.
    pub fn backward(
        &self,
        batch: &Batch,
        output: &Array2<f64>,
        cache: Option<&ForwardCache>,
    ) -> Result<(f64, Network)> {
        let cache = cache.ok_or(Error::MissingCache)?;
        let targets = batch.targets();
        let valid = batch.valid_rows();
        let loss = mse(output, targets, &valid);
        let rows = valid.iter().filter(|v| **v).count().max(1);
        let scale = 2.0 / (rows * output.ncols()) as f64;
        let mut d_out = output - targets;
        for (r, ok) in valid.iter().enumerate() {
            if *ok {
                d_out.row_mut(r).mapv_inplace(|v| v * scale);
            } else {
                d_out.row_mut(r).fill(0.0);
            }
        }
        let act = self.spec.activation;
        let grads = match (&self.network, cache) {
            (Network::Fc(layers), ForwardCache::Fc(c)) => {
                Network::Fc(dense_backward(layers, act, c, d_out).0)
            }
            (Network::Lstm { cells, output }, ForwardCache::Lstm(c)) => {
                let (cells, output) = lstm_backward(cells, output, act, c, d_out);
                Network::Lstm { cells, output }
            }
            _ => return Err(Error::MissingCache),
        };
        Ok((loss, grads))
    }

    /// Loss of a batch without keeping activations.
    pub fn batch_loss(&self, batch: &Batch) -> Result<f64> {
        let act = self.spec.activation;
        let y = match (&self.network, batch) {
            (Network::Fc(layers), Batch::Frames { inputs, .. }) => {
                dense_forward(layers, act, inputs.view(), false).0
            }
            (
                Network::Lstm { cells, output },
                Batch::Sequences {
                    inputs,
                    lengths,
                    steps,
                    ..
                },
            ) => lstm_forward(cells, output, act, inputs.view(), *steps, lengths.len(), false).0,
            _ => {
                return Err(Error::DimensionMismatch(
                    "batch layout does not match network kind".into(),
                ))
            }
        };
        Ok(mse(&y, batch.targets(), &batch.valid_rows()))
    }

    /// Rounds every parameter to the nearest `f32`, matching what
    /// [`save_model`] stores.
    pub fn quantize_to_f32(&mut self) {
        for t in self.network.tensors_mut() {
            for v in t.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
        self.norm_mu.mapv_inplace(|v| v as f32 as f64);
        self.norm_sigma.mapv_inplace(|v| v as f32 as f64);
    }
}

fn check_width(inputs: &Array2<f64>, width: usize) -> Result<()> {
    if inputs.ncols() != width {
        return Err(Error::DimensionMismatch(format!(
            "batch rows have width {}, network expects {width}",
            inputs.ncols()
        )));
    }
    Ok(())
}

pub(crate) fn normalize_with(
    log_power: ArrayView2<'_, f64>,
    mu: ArrayView1<'_, f64>,
    sigma: ArrayView1<'_, f64>,
) -> Array2<f64> {
    let mut out = log_power.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        row -= &mu;
        row /= &sigma;
    }
    out
}
