//! Single-layer LSTM and GRU regressors with a rectified dense head.
//!
//! The network reads a window of scalar cumulative counts and emits one
//! non-negative value. All parameters live in one flat vector so the
//! optimizer, the checkpoint format and gradient checking can treat them
//! uniformly. Layout, for `G` gates (4 for LSTM, 3 for GRU), `n` hidden units
//! and `m` inputs per step:
//!
//! | block     | shape        | index                       |
//! |-----------|--------------|-----------------------------|
//! | kernel    | `m x G*n`    | `i * G*n + g * n + j`       |
//! | recurrent | `n x G*n`    | `k * G*n + g * n + j`       |
//! | bias      | `G*n`        | `g * n + j`                 |
//! | dense     | `n`          | `j`                         |
//! | dense bias| `1`          |                             |
//!
//! Gate order is `input, forget, candidate, output` for the LSTM and
//! `update, reset, candidate` for the GRU. The GRU applies the reset gate to
//! the previous state before the recurrent product, which gives it a single
//! bias vector.

mod checkpoint;
mod gru;
mod lstm;
mod rmsprop;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::WindowSample;
use crate::rng::RngStream;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use rmsprop::{RmsProp, RmsPropConfig};
pub use train::{train, CvReport, FoldReport, TrainConfig, TrainedNetwork};

#[derive(Debug, Error)]
pub enum RecurrentError {
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("window has {got} values, expected {expected}")]
    WindowLength { expected: usize, got: usize },
    #[error("non-finite value in input window")]
    NonFinite,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        })
    }
}

impl FromStr for CellKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            other => Err(format!("unknown cell kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecurrentSpec {
    pub cell: CellKind,
    pub hidden_units: usize,
    pub input_dim: usize,
    pub window_length: usize,
}

impl Default for RecurrentSpec {
    fn default() -> Self {
        Self {
            cell: CellKind::Lstm,
            hidden_units: 32,
            input_dim: 1,
            window_length: crate::corpus::DEFAULT_WINDOW_LENGTH,
        }
    }
}

impl RecurrentSpec {
    pub fn new(cell: CellKind, hidden_units: usize, input_dim: usize) -> Self {
        Self {
            cell,
            hidden_units,
            input_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RecurrentError> {
        if self.hidden_units == 0 || self.input_dim == 0 || self.window_length == 0 {
            return Err(RecurrentError::Spec(format!(
                "hidden_units, input_dim and window_length must be >= 1 (got {}, {}, {})",
                self.hidden_units, self.input_dim, self.window_length
            )));
        }
        Ok(())
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

/// Parameter count with the dense head: `G n (n + m + 1) + n + 1`.
pub fn param_count(spec: &RecurrentSpec) -> usize {
    let (g, n, m) = (spec.cell.gates(), spec.hidden_units, spec.input_dim);
    g * n * (n + m + 1) + n + 1
}

/// Offsets of the parameter blocks in the flat vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub n: usize,
    pub m: usize,
    /// Width of one gate-stacked row, `G * n`.
    pub width: usize,
    pub kernel: usize,
    pub recurrent: usize,
    pub bias: usize,
    pub dense: usize,
    pub dense_bias: usize,
    pub total: usize,
}

impl Layout {
    fn new(spec: &RecurrentSpec) -> Self {
        let n = spec.hidden_units;
        let m = spec.input_dim;
        let width = spec.cell.gates() * n;
        let kernel = 0;
        let recurrent = kernel + m * width;
        let bias = recurrent + n * width;
        let dense = bias + width;
        let dense_bias = dense + n;
        Self {
            n,
            m,
            width,
            kernel,
            recurrent,
            bias,
            dense,
            dense_bias,
            total: dense_bias + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentWeights {
    pub spec: RecurrentSpec,
    pub params: Vec<f64>,
}

impl RecurrentWeights {
    pub fn zeros(spec: RecurrentSpec) -> Result<Self, RecurrentError> {
        spec.validate()?;
        Ok(Self {
            spec,
            params: vec![0.0; spec.layout().total],
        })
    }

    pub fn kernel(&self) -> &[f64] {
        let l = self.spec.layout();
        &self.params[l.kernel..l.recurrent]
    }

    pub fn recurrent(&self) -> &[f64] {
        let l = self.spec.layout();
        &self.params[l.recurrent..l.bias]
    }

    pub fn bias(&self) -> &[f64] {
        let l = self.spec.layout();
        &self.params[l.bias..l.dense]
    }

    pub fn dense(&self) -> &[f64] {
        let l = self.spec.layout();
        &self.params[l.dense..l.dense_bias]
    }

    pub fn dense_bias(&self) -> f64 {
        self.params[self.spec.layout().dense_bias]
    }

    pub fn set_dense_bias(&mut self, value: f64) {
        let i = self.spec.layout().dense_bias;
        self.params[i] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Glorot-uniform bound for a `fan_in x fan_out` matrix.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform kernels, zero biases, LSTM forget-gate bias 1.
pub fn init_weights(spec: &RecurrentSpec, seed: u64) -> Result<RecurrentWeights, RecurrentError> {
    let mut w = RecurrentWeights::zeros(*spec)?;
    let l = spec.layout();
    let mut rng = RngStream::keyed(seed, &[0x1a17]);
    let mut fill = |slice: &mut [f64], bound: f64| {
        for p in slice {
            *p = bound * (2.0 * rng.uniform() - 1.0);
        }
    };
    fill(
        &mut w.params[l.kernel..l.recurrent],
        glorot_bound(l.m, l.width),
    );
    fill(
        &mut w.params[l.recurrent..l.bias],
        glorot_bound(l.n, l.width),
    );
    fill(&mut w.params[l.dense..l.dense_bias], glorot_bound(l.n, 1));
    if spec.cell == CellKind::Lstm {
        for b in &mut w.params[l.bias + l.n..l.bias + 2 * l.n] {
            *b = 1.0;
        }
    }
    Ok(w)
}

fn check_window(spec: &RecurrentSpec, window: &[f64]) -> Result<(), RecurrentError> {
    let expected = spec.window_length * spec.input_dim;
    if window.len() != expected {
        return Err(RecurrentError::WindowLength {
            expected,
            got: window.len(),
        });
    }
    if window.iter().any(|v| !v.is_finite()) {
        return Err(RecurrentError::NonFinite);
    }
    Ok(())
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Network output for one (already normalized) window.
pub fn forward(weights: &RecurrentWeights, window: &[f64]) -> Result<f64, RecurrentError> {
    check_window(&weights.spec, window)?;
    let h = final_hidden(weights, window, None);
    Ok(head(weights, &h).max(0.0))
}

/// Dense head before the rectifier.
fn head(weights: &RecurrentWeights, h: &[f64]) -> f64 {
    weights.dense_bias()
        + weights
            .dense()
            .iter()
            .zip(h)
            .map(|(w, x)| w * x)
            .sum::<f64>()
}

fn final_hidden(
    weights: &RecurrentWeights,
    window: &[f64],
    tape: Option<&mut Vec<f64>>,
) -> Vec<f64> {
    match weights.spec.cell {
        CellKind::Lstm => lstm::run(weights, window, tape),
        CellKind::Gru => gru::run(weights, window, tape),
    }
}

/// Mean squared error.
pub fn loss(predictions: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(
        predictions.len(),
        targets.len(),
        "prediction/target length mismatch"
    );
    if predictions.is_empty() {
        return 0.0;
    }
    predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / predictions.len() as f64
}

/// Batch MSE and its exact gradient with respect to every parameter.
pub fn gradients(
    weights: &RecurrentWeights,
    batch: &[WindowSample],
) -> Result<(f64, Vec<f64>), RecurrentError> {
    if batch.is_empty() {
        return Err(RecurrentError::EmptyBatch);
    }
    let mut grad = vec![0.0; weights.params.len()];
    let mut tape = Vec::new();
    let l = weights.spec.layout();
    let inv_b = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for s in batch {
        check_window(&weights.spec, &s.input)?;
        tape.clear();
        let h = final_hidden(weights, &s.input, Some(&mut tape));
        let pre = head(weights, &h);
        let y = pre.max(0.0);
        total += (y - s.target).powi(2);
        if pre <= 0.0 {
            continue;
        }
        let dpre = 2.0 * (y - s.target) * inv_b;
        grad[l.dense_bias] += dpre;
        for j in 0..l.n {
            grad[l.dense + j] += dpre * h[j];
        }
        let dh: Vec<f64> = weights.dense().iter().map(|w| dpre * w).collect();
        match weights.spec.cell {
            CellKind::Lstm => lstm::backward(weights, &s.input, &tape, dh, &mut grad),
            CellKind::Gru => gru::backward(weights, &s.input, &tape, dh, &mut grad),
        }
    }
    Ok((total * inv_b, grad))
}
