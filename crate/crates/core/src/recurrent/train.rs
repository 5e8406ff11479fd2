use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    forward, gradients, init_weights, RecurrentError, RecurrentSpec, RecurrentWeights, RmsProp,
    RmsPropConfig,
};
use crate::corpus::WindowSample;
use crate::rng::RngStream;

const LANE_FOLDS: u64 = 0xf01d;
const LANE_INIT: u64 = 0x1417;
const LANE_SHUFFLE: u64 = 0x5aff;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub folds: usize,
    pub optimizer: RmsPropConfig,
    pub max_epochs: usize,
    pub patience: usize,
    /// Normalization scale. `None` uses the largest count in the training windows.
    pub scale: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 5,
            folds: 4,
            optimizer: RmsPropConfig::default(),
            max_epochs: 500,
            patience: 20,
            scale: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RecurrentError> {
        let err = |m: String| Err(RecurrentError::Config(m));
        if self.folds < 2 {
            return err(format!("folds must be >= 2, got {}", self.folds));
        }
        if self.batch_size == 0 {
            return err("batch_size must be >= 1".into());
        }
        if self.max_epochs == 0 {
            return err("max_epochs must be >= 1".into());
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return err(format!(
                "learning_rate must be positive, got {}",
                o.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&o.rho) {
            return err(format!("rho must lie in [0, 1), got {}", o.rho));
        }
        if !(o.epsilon > 0.0 && o.epsilon.is_finite()) {
            return err(format!("epsilon must be positive, got {}", o.epsilon));
        }
        if let Some(s) = self.scale {
            if !(s > 0.0 && s.is_finite()) {
                return err(format!("normalization scale must be positive, got {s}"));
            }
        }
        Ok(())
    }
}

/// Trained weights together with the normalization they expect.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedNetwork {
    pub weights: RecurrentWeights,
    pub scale: f64,
}

impl TrainedNetwork {
    /// Predict in count units from a raw (unnormalized) window.
    pub fn predict(&self, raw_window: &[f64]) -> Result<f64, RecurrentError> {
        let normalized: Vec<f64> = raw_window.iter().map(|v| v / self.scale).collect();
        Ok(forward(&self.weights, &normalized)? * self.scale)
    }
}

/// Curves are MSE in count units (squared), one entry per epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub validation_size: usize,
    pub train_curve: Vec<f64>,
    pub validation_curve: Vec<f64>,
    /// 1-based epoch with the lowest validation MSE.
    pub best_epoch: usize,
    pub best_validation_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub seed: u64,
    pub scale: f64,
    /// Fold index of each input sample.
    pub fold_of_sample: Vec<usize>,
    pub folds: Vec<FoldReport>,
    pub mean_validation_mse: f64,
    pub selected_epochs: usize,
    pub final_train_curve: Vec<f64>,
}

fn shuffled(len: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = (rng.next_raw() % (i as u64 + 1)) as usize;
        idx.swap(i, j);
    }
    idx
}

fn normalize(samples: &[WindowSample], scale: f64) -> Vec<WindowSample> {
    samples
        .iter()
        .map(|s| WindowSample {
            author_id: s.author_id.clone(),
            input: s.input.iter().map(|v| v / scale).collect(),
            target: s.target / scale,
        })
        .collect()
}

fn data_scale(samples: &[WindowSample]) -> f64 {
    let max = samples
        .iter()
        .flat_map(|s| s.input.iter().copied().chain(std::iter::once(s.target)))
        .fold(0.0f64, f64::max);
    if max > 0.0 {
        max
    } else {
        1.0
    }
}

/// Negate the dense kernel when most samples start with a negative head
/// pre-activation, so the rectifier does not begin dead.
fn orient_head(weights: &mut RecurrentWeights, data: &[&WindowSample]) {
    let (mut pos, mut neg) = (0usize, 0usize);
    for s in data {
        let h = super::final_hidden(weights, &s.input, None);
        let pre = super::head(weights, &h);
        if pre > 0.0 {
            pos += 1;
        } else if pre < 0.0 {
            neg += 1;
        }
    }
    if neg > pos {
        let l = weights.spec.layout();
        for w in &mut weights.params[l.dense..l.dense_bias] {
            *w = -*w;
        }
    }
}

fn mse(weights: &RecurrentWeights, samples: &[&WindowSample]) -> Result<f64, RecurrentError> {
    let mut total = 0.0;
    for s in samples {
        total += (forward(weights, &s.input)? - s.target).powi(2);
    }
    Ok(total / samples.len() as f64)
}

/// One pass over `data` in a seeded order. Returns the mean batch loss.
fn run_epoch(
    weights: &mut RecurrentWeights,
    opt: &mut RmsProp,
    data: &[&WindowSample],
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<f64, RecurrentError> {
    let order = shuffled(data.len(), rng);
    let mut batch: Vec<WindowSample> = Vec::with_capacity(batch_size);
    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    for chunk in order.chunks(batch_size) {
        batch.clear();
        batch.extend(chunk.iter().map(|&i| data[i].clone()));
        let (loss, grad) = gradients(weights, &batch)?;
        opt.step(&mut weights.params, &grad);
        loss_sum += loss;
        batches += 1;
    }
    if !weights.is_finite() {
        return Err(RecurrentError::Config(
            "training diverged to non-finite weights".into(),
        ));
    }
    Ok(loss_sum / batches as f64)
}

fn fit_fold(
    spec: &RecurrentSpec,
    cfg: &TrainConfig,
    seed: u64,
    fold: usize,
    train: &[&WindowSample],
    validation: &[&WindowSample],
    scale2: f64,
) -> Result<FoldReport, RecurrentError> {
    let init_seed = RngStream::keyed(seed, &[LANE_INIT, fold as u64]).next_raw();
    let mut weights = init_weights(spec, init_seed)?;
    orient_head(&mut weights, train);
    let mut opt = RmsProp::new(cfg.optimizer, weights.params.len());
    let mut rng = RngStream::keyed(seed, &[LANE_SHUFFLE, fold as u64]);
    let mut report = FoldReport {
        fold,
        train_size: train.len(),
        validation_size: validation.len(),
        train_curve: Vec::new(),
        validation_curve: Vec::new(),
        best_epoch: 0,
        best_validation_mse: f64::INFINITY,
    };
    for epoch in 1..=cfg.max_epochs {
        let train_loss = run_epoch(&mut weights, &mut opt, train, cfg.batch_size, &mut rng)?;
        let val = mse(&weights, validation)?;
        report.train_curve.push(train_loss * scale2);
        report.validation_curve.push(val * scale2);
        if val * scale2 < report.best_validation_mse {
            report.best_validation_mse = val * scale2;
            report.best_epoch = epoch;
        } else if epoch - report.best_epoch >= cfg.patience {
            break;
        }
    }
    Ok(report)
}

/// Cross-validate to choose an epoch count, then retrain on every sample.
///
/// Samples are in raw count units. Folds are a seeded round-robin over a
/// shuffled index, train in parallel, and each gets its own initialization
/// and batch-order streams. The final fit is single-threaded.
pub fn train(
    samples: &[WindowSample],
    spec: &RecurrentSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(TrainedNetwork, CvReport), RecurrentError> {
    spec.validate()?;
    cfg.validate()?;
    if samples.is_empty() {
        return Err(RecurrentError::TooFewSamples {
            needed: cfg.folds,
            got: 0,
        });
    }
    if samples.len() < cfg.folds {
        return Err(RecurrentError::TooFewSamples {
            needed: cfg.folds,
            got: samples.len(),
        });
    }
    let scale = cfg.scale.unwrap_or_else(|| data_scale(samples));
    let data = normalize(samples, scale);
    for s in &data {
        super::check_window(spec, &s.input)?;
        if !s.target.is_finite() {
            return Err(RecurrentError::NonFinite);
        }
    }
    let scale2 = scale * scale;

    let order = shuffled(data.len(), &mut RngStream::keyed(seed, &[LANE_FOLDS]));
    let mut fold_of_sample = vec![0usize; data.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold_of_sample[i] = pos % cfg.folds;
    }

    let folds: Vec<FoldReport> = (0..cfg.folds)
        .into_par_iter()
        .map(|k| {
            let (mut tr, mut va) = (Vec::new(), Vec::new());
            for (s, &f) in data.iter().zip(&fold_of_sample) {
                if f == k {
                    va.push(s);
                } else {
                    tr.push(s);
                }
            }
            fit_fold(spec, cfg, seed, k, &tr, &va, scale2)
        })
        .collect::<Result<_, _>>()?;

    let mean_validation_mse =
        folds.iter().map(|f| f.best_validation_mse).sum::<f64>() / folds.len() as f64;
    let mean_best = folds.iter().map(|f| f.best_epoch as f64).sum::<f64>() / folds.len() as f64;
    let selected_epochs = (mean_best.round() as usize).max(1);
    log::info!(
        "cross-validation: mean best epoch {mean_best:.2}, selected {selected_epochs}, mean validation MSE {mean_validation_mse:.4}"
    );

    let all: Vec<&WindowSample> = data.iter().collect();
    let final_fold = cfg.folds as u64;
    let init_seed = RngStream::keyed(seed, &[LANE_INIT, final_fold]).next_raw();
    let mut weights = init_weights(spec, init_seed)?;
    orient_head(&mut weights, &all);
    let mut opt = RmsProp::new(cfg.optimizer, weights.params.len());
    let mut rng = RngStream::keyed(seed, &[LANE_SHUFFLE, final_fold]);
    let mut final_train_curve = Vec::with_capacity(selected_epochs);
    for _ in 0..selected_epochs {
        let l = run_epoch(&mut weights, &mut opt, &all, cfg.batch_size, &mut rng)?;
        final_train_curve.push(l * scale2);
    }

    Ok((
        TrainedNetwork { weights, scale },
        CvReport {
            seed,
            scale,
            fold_of_sample,
            folds,
            mean_validation_mse,
            selected_epochs,
            final_train_curve,
        },
    ))
}
