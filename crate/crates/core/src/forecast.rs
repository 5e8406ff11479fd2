//! Hybrid forecasting: a recurrent first-year prediction followed by
//! compound power-law/Poisson increments in later years.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{window_input, AuthorSeries, SeriesSet};
use crate::recurrent::{RecurrentError, TrainedNetwork};
use crate::rng::{hash_str, RngStream};
use crate::stochastic::{
    compound_increment, poisson_sample, powerlaw_sample_scaled, DomainError, PowerLawParams,
};

const LANE_REALIZATION: u64 = 0x7ea1;
const LANE_ENSEMBLE: u64 = 0xe45e;
const LANE_PROBABILITY: u64 = 0x9b0b;

/// Minimum first-year increment (recurrent plus shallow) counted as publishing.
pub const FIRST_YEAR_PUBLISH_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("author {author}: no input window ending {year}")]
    MissingWindow { author: String, year: i32 },
    #[error("invalid forecast config: {0}")]
    Config(String),
    #[error("invalid mode: {0}")]
    Mode(String),
    #[error(transparent)]
    Recurrent(#[from] RecurrentError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("forecast file line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Source of the annual increment added on top of the recurrent prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Full,
    LstmOnly,
    ConstPoisson(f64),
    UnitScale,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Full => f.write_str("full"),
            Mode::LstmOnly => f.write_str("lstm_only"),
            Mode::ConstPoisson(c) => write!(f, "const_poisson({c})"),
            Mode::UnitScale => f.write_str("unit_scale"),
        }
    }
}

impl FromStr for Mode {
    type Err = ForecastError;

    /// Accepts `full`, `lstm_only`, `unit_scale`, `const_poisson(c)` and
    /// `const_poisson=c`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "full" => return Ok(Mode::Full),
            "lstm_only" => return Ok(Mode::LstmOnly),
            "unit_scale" => return Ok(Mode::UnitScale),
            _ => {}
        }
        let arg = s
            .strip_prefix("const_poisson(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("const_poisson="));
        match arg {
            Some(c) => {
                let c: f64 = c
                    .trim()
                    .parse()
                    .map_err(|_| ForecastError::Mode(format!("bad constant in '{s}'")))?;
                let m = Mode::ConstPoisson(c);
                m.validate()?;
                Ok(m)
            }
            None => Err(ForecastError::Mode(format!(
                "unknown mode '{s}' (expected full, lstm_only, const_poisson(c) or unit_scale)"
            ))),
        }
    }
}

impl Mode {
    pub fn validate(&self) -> Result<(), ForecastError> {
        if let Mode::ConstPoisson(c) = self {
            if !(c.is_finite() && *c >= 0.0) {
                return Err(ForecastError::Mode(format!(
                    "const_poisson needs c >= 0, got {c}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    pub network: TrainedNetwork,
    pub powerlaw: PowerLawParams,
    pub mode: Mode,
}

impl HybridModel {
    pub fn new(
        network: TrainedNetwork,
        powerlaw: PowerLawParams,
        mode: Mode,
    ) -> Result<Self, ForecastError> {
        mode.validate()?;
        if matches!(mode, Mode::Full | Mode::UnitScale) {
            powerlaw.validate()?;
        }
        Ok(Self {
            network,
            powerlaw,
            mode,
        })
    }

    /// Mode-dependent annual increment at cumulative level `h`.
    pub fn increment(&self, h: f64, rng: &mut RngStream) -> Result<u64, ForecastError> {
        Ok(match self.mode {
            Mode::Full => compound_increment(h, &self.powerlaw, rng)?,
            Mode::LstmOnly => 0,
            Mode::ConstPoisson(c) => poisson_sample(c, rng)?,
            Mode::UnitScale => {
                let x = powerlaw_sample_scaled(1.0, self.powerlaw.q, rng);
                poisson_sample(x, rng)?
            }
        })
    }

    /// Denormalized recurrent output `y_bar` on the window ending at `t_x - 1`,
    /// together with `h(t_x - 1)`.
    pub fn recurrent_step(
        &self,
        series: &AuthorSeries,
        t_x: i32,
    ) -> Result<(f64, f64), ForecastError> {
        let len = self.network.weights.spec.window_length;
        let window =
            window_input(series, t_x - 1, len).ok_or_else(|| ForecastError::MissingWindow {
                author: series.author_id.clone(),
                year: t_x - 1,
            })?;
        let h_prev = *window.last().expect("window length >= 1");
        Ok((self.network.predict(&window)?, h_prev))
    }
}

/// Same network and power law under a different increment source.
pub fn ablate(model: &HybridModel, mode: Mode) -> Result<HybridModel, ForecastError> {
    HybridModel::new(model.network.clone(), model.powerlaw, mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastConfig {
    pub t_x: i32,
    pub t_y: i32,
    pub rollouts: usize,
    pub seed: u64,
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<(), ForecastError> {
        if self.t_y < self.t_x {
            return Err(ForecastError::Config(format!(
                "t_y ({}) must not precede t_x ({})",
                self.t_y, self.t_x
            )));
        }
        if self.rollouts == 0 {
            return Err(ForecastError::Config("rollouts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn years(&self) -> usize {
        (self.t_y - self.t_x + 1) as usize
    }
}

/// Outcome of the stochastic first-year step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstYear {
    pub y_bar: f64,
    pub h_prev: f64,
    pub shallow: u64,
    pub value: f64,
    pub clamped: bool,
}

impl FirstYear {
    pub fn published(&self) -> bool {
        self.y_bar - self.h_prev + self.shallow as f64 >= FIRST_YEAR_PUBLISH_THRESHOLD
    }
}

fn first_year_from(
    model: &HybridModel,
    y_bar: f64,
    h_prev: f64,
    rng: &mut RngStream,
) -> Result<FirstYear, ForecastError> {
    let shallow = model.increment(h_prev, rng)?;
    let raw = y_bar + shallow as f64;
    Ok(FirstYear {
        y_bar,
        h_prev,
        shallow,
        value: raw.max(h_prev),
        clamped: raw < h_prev,
    })
}

/// `h_hat(t_x) = max(y_bar + y, h(t_x - 1))`.
pub fn predict_first_year(
    model: &HybridModel,
    series: &AuthorSeries,
    t_x: i32,
    rng: &mut RngStream,
) -> Result<FirstYear, ForecastError> {
    let (y_bar, h_prev) = model.recurrent_step(series, t_x)?;
    first_year_from(model, y_bar, h_prev, rng)
}

/// Continue a trajectory from its first value through `years` entries.
/// Returns the trajectory and, per year, whether the author published.
fn continue_from(
    model: &HybridModel,
    first: FirstYear,
    years: usize,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, Vec<bool>), ForecastError> {
    let mut traj = Vec::with_capacity(years);
    let mut published = Vec::with_capacity(years);
    traj.push(first.value);
    published.push(first.published());
    for _ in 1..years {
        let prev = *traj.last().unwrap();
        let y = model.increment(prev, rng)?;
        traj.push(prev + y as f64);
        published.push(y >= 1);
    }
    Ok((traj, published))
}

/// One trajectory `h_hat(t_x ..= t_y)` drawn from `stream`.
pub fn rollout(
    model: &HybridModel,
    series: &AuthorSeries,
    cfg: &ForecastConfig,
    stream: &mut RngStream,
) -> Result<Vec<f64>, ForecastError> {
    cfg.validate()?;
    let first = predict_first_year(model, series, cfg.t_x, stream)?;
    Ok(continue_from(model, first, cfg.years(), stream)?.0)
}

/// Fraction of `rollouts` one-step continuations that publish in the year
/// after `prefix`. An empty prefix means the first forecast year `t_x`, where
/// the recurrent increment takes part; otherwise the last prefix value is the
/// current level and only integer increments count.
pub fn publication_probability(
    model: &HybridModel,
    series: &AuthorSeries,
    t_x: i32,
    prefix: &[f64],
    rollouts: usize,
    stream: &mut RngStream,
) -> Result<f64, ForecastError> {
    if rollouts == 0 {
        return Err(ForecastError::Config("rollouts must be >= 1".into()));
    }
    let mut hits = 0usize;
    match prefix.last() {
        None => {
            let (y_bar, h_prev) = model.recurrent_step(series, t_x)?;
            for _ in 0..rollouts {
                if first_year_from(model, y_bar, h_prev, stream)?.published() {
                    hits += 1;
                }
            }
        }
        Some(&h) => {
            for _ in 0..rollouts {
                if model.increment(h, stream)? >= 1 {
                    hits += 1;
                }
            }
        }
    }
    Ok(hits as f64 / rollouts as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuthorForecast {
    pub author_id: String,
    pub t_x: i32,
    pub y_bar: f64,
    pub h_prev: f64,
    /// Single keyed draw, used as the point forecast.
    pub realization: Vec<f64>,
    /// Per-year mean over the ensemble.
    pub mean: Vec<f64>,
    /// Per-year fraction of ensemble members that publish.
    pub p_publish: Vec<f64>,
    /// Full ensemble, kept only when requested.
    pub ensemble: Option<Vec<Vec<f64>>>,
    pub realization_clamped: bool,
}

pub fn realization_stream(seed: u64, author_id: &str, t_x: i32) -> RngStream {
    RngStream::keyed(seed, &[hash_str(author_id), LANE_REALIZATION, t_x as u64])
}

pub fn ensemble_stream(seed: u64, author_id: &str, t_x: i32, member: usize) -> RngStream {
    RngStream::keyed(
        seed,
        &[
            hash_str(author_id),
            LANE_ENSEMBLE,
            t_x as u64,
            member as u64,
        ],
    )
}

pub fn probability_stream(seed: u64, author_id: &str, year: i32) -> RngStream {
    RngStream::keyed(seed, &[hash_str(author_id), LANE_PROBABILITY, year as u64])
}

/// Realization plus an `R`-member ensemble for one author.
pub fn forecast_author(
    model: &HybridModel,
    series: &AuthorSeries,
    cfg: &ForecastConfig,
    keep_ensemble: bool,
) -> Result<AuthorForecast, ForecastError> {
    cfg.validate()?;
    let years = cfg.years();
    let (y_bar, h_prev) = model.recurrent_step(series, cfg.t_x)?;
    let mut rng = realization_stream(cfg.seed, &series.author_id, cfg.t_x);
    let first = first_year_from(model, y_bar, h_prev, &mut rng)?;
    let (realization, _) = continue_from(model, first, years, &mut rng)?;

    let mut sum = vec![0.0; years];
    let mut hits = vec![0usize; years];
    let mut ensemble = keep_ensemble.then(|| Vec::with_capacity(cfg.rollouts));
    for r in 0..cfg.rollouts {
        let mut rng = ensemble_stream(cfg.seed, &series.author_id, cfg.t_x, r);
        let first = first_year_from(model, y_bar, h_prev, &mut rng)?;
        let (traj, published) = continue_from(model, first, years, &mut rng)?;
        for t in 0..years {
            sum[t] += traj[t];
            hits[t] += usize::from(published[t]);
        }
        if let Some(e) = ensemble.as_mut() {
            e.push(traj);
        }
    }
    let n = cfg.rollouts as f64;
    Ok(AuthorForecast {
        author_id: series.author_id.clone(),
        t_x: cfg.t_x,
        y_bar,
        h_prev,
        realization,
        mean: sum.into_iter().map(|s| s / n).collect(),
        p_publish: hits.into_iter().map(|h| h as f64 / n).collect(),
        ensemble,
        realization_clamped: first.clamped,
    })
}

/// Forecast every author in `cohort`. Results are sorted by author id and do
/// not depend on processing order.
pub fn forecast_cohort(
    model: &HybridModel,
    cohort: &SeriesSet,
    cfg: &ForecastConfig,
    keep_ensemble: bool,
) -> Result<Vec<AuthorForecast>, ForecastError> {
    cfg.validate()?;
    let series: Vec<&AuthorSeries> = cohort.series.values().collect();
    let out: Vec<AuthorForecast> = series
        .par_iter()
        .map(|s| forecast_author(model, s, cfg, keep_ensemble))
        .collect::<Result<_, _>>()?;
    let clamped = out.iter().filter(|f| f.realization_clamped).count();
    if !out.is_empty() {
        log::info!(
            "first-year clamp applied to {clamped} of {} realizations ({:.2}%)",
            out.len(),
            100.0 * clamped as f64 / out.len() as f64
        );
    }
    Ok(out)
}

/// One-step forecasts on true inputs: for every year `t` in `t_x..=t_y`, the
/// first-year step with the window ending at `t - 1`. Output has the same
/// per-year layout as [`forecast_cohort`].
pub fn forecast_short_term(
    model: &HybridModel,
    cohort: &SeriesSet,
    cfg: &ForecastConfig,
) -> Result<Vec<AuthorForecast>, ForecastError> {
    cfg.validate()?;
    let series: Vec<&AuthorSeries> = cohort.series.values().collect();
    series
        .par_iter()
        .map(|s| {
            let mut fc = AuthorForecast {
                author_id: s.author_id.clone(),
                t_x: cfg.t_x,
                y_bar: 0.0,
                h_prev: 0.0,
                realization: Vec::with_capacity(cfg.years()),
                mean: Vec::with_capacity(cfg.years()),
                p_publish: Vec::with_capacity(cfg.years()),
                ensemble: None,
                realization_clamped: false,
            };
            for year in cfg.t_x..=cfg.t_y {
                let (y_bar, h_prev) = model.recurrent_step(s, year)?;
                if year == cfg.t_x {
                    fc.y_bar = y_bar;
                    fc.h_prev = h_prev;
                }
                let mut rng = realization_stream(cfg.seed, &s.author_id, year);
                let real = first_year_from(model, y_bar, h_prev, &mut rng)?;
                fc.realization.push(real.value);
                fc.realization_clamped |= real.clamped;
                let mut sum = 0.0;
                let mut hits = 0usize;
                for r in 0..cfg.rollouts {
                    let mut rng = ensemble_stream(cfg.seed, &s.author_id, year, r);
                    let fy = first_year_from(model, y_bar, h_prev, &mut rng)?;
                    sum += fy.value;
                    hits += usize::from(fy.published());
                }
                fc.mean.push(sum / cfg.rollouts as f64);
                fc.p_publish.push(hits as f64 / cfg.rollouts as f64);
            }
            Ok(fc)
        })
        .collect()
}

/// Mean annual increment over `first_year..=last_year` across `series`;
/// the default constant for the `const_poisson` ablation.
pub fn mean_annual_increment<'a>(
    series: impl IntoIterator<Item = &'a AuthorSeries>,
    first_year: i32,
    last_year: i32,
) -> f64 {
    let (mut total, mut cells) = (0.0, 0usize);
    for s in series {
        for y in first_year..=last_year {
            if let Some(a) = s.annual(y) {
                total += f64::from(a);
                cells += 1;
            }
        }
    }
    if cells == 0 {
        0.0
    } else {
        total / cells as f64
    }
}

/// One row of a forecast CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub author_id: String,
    pub year: i32,
    pub h_true: Option<u32>,
    pub h_hat_realization: f64,
    pub h_hat_mean: f64,
    pub p_publish: f64,
}

pub fn forecast_rows(forecasts: &[AuthorForecast], truth: &SeriesSet) -> Vec<ForecastRow> {
    let mut rows = Vec::new();
    for f in forecasts {
        let series = truth.get(&f.author_id);
        for (k, &h_hat) in f.realization.iter().enumerate() {
            let year = f.t_x + k as i32;
            rows.push(ForecastRow {
                author_id: f.author_id.clone(),
                year,
                h_true: series.and_then(|s| s.h(year)),
                h_hat_realization: h_hat,
                h_hat_mean: f.mean[k],
                p_publish: f.p_publish[k],
            });
        }
    }
    rows
}

pub fn write_forecast_csv<W: Write>(rows: &[ForecastRow], out: W) -> Result<(), ForecastError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_forecast_csv<R: Read>(input: R) -> Result<Vec<ForecastRow>, ForecastError> {
    let mut rd = csv::Reader::from_reader(input);
    let headers = rd.headers()?.clone();
    let expected = [
        "author_id",
        "year",
        "h_true",
        "h_hat_realization",
        "h_hat_mean",
        "p_publish",
    ];
    if headers.iter().ne(expected.iter().copied()) {
        return Err(ForecastError::Malformed {
            line: 1,
            message: format!("expected header {}", expected.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in rd.deserialize() {
        let row: ForecastRow = rec.map_err(|e| ForecastError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        if !(0.0..=1.0).contains(&row.p_publish) {
            return Err(ForecastError::Malformed {
                line: 0,
                message: format!("p_publish {} outside [0, 1]", row.p_publish),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}
