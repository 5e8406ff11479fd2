//! Shallow comparison models over a level-by-interval partition of authors:
//! the piecewise Poisson model and the combined piecewise/log-log model.
//!
//! Authors are grouped by cumulative count `i = h(t_{j-1})` at the start of
//! each interval `(t_{j-1}, t_j]`. Levels are 1-based in fits; level 0 is
//! tabulated but never fitted.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AuthorSeries, SeriesSet};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("year grid must be strictly increasing with at least two points")]
    Grid,
    #[error("invalid baseline parameters: {0}")]
    Params(String),
    #[error("level {level} has no fitted rate")]
    UnfitLevel { level: usize },
    #[error("year {0} is not on the year grid")]
    YearOffGrid(i32),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Counts per cell `(i, j)`: `n` authors at level `i` at `t_{j-1}` and their
/// `m` publications in `(t_{j-1}, t_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTable {
    /// `t_0, t_1, ..., t_J`.
    pub grid: Vec<i32>,
    pub cap: usize,
    n: Vec<Vec<u64>>,
    m: Vec<Vec<u64>>,
    pub overflow_n: Vec<u64>,
    pub overflow_m: Vec<u64>,
    /// Authors whose series does not reach `t_j`, per column.
    pub missing: Vec<u64>,
}

impl PartitionTable {
    /// Empty table over `grid` with levels `0..=cap`.
    pub fn empty(grid: Vec<i32>, cap: usize) -> Result<Self, BaselineError> {
        if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(BaselineError::Grid);
        }
        let cols = grid.len() - 1;
        Ok(Self {
            grid,
            cap,
            n: vec![vec![0; cols]; cap + 1],
            m: vec![vec![0; cols]; cap + 1],
            overflow_n: vec![0; cols],
            overflow_m: vec![0; cols],
            missing: vec![0; cols],
        })
    }

    /// Number of intervals `J`.
    pub fn columns(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn n(&self, i: usize, j: usize) -> u64 {
        self.n[i][j - 1]
    }

    pub fn m(&self, i: usize, j: usize) -> u64 {
        self.m[i][j - 1]
    }

    /// Add `authors` authors at level `i` with `pubs` publications in column `j`.
    pub fn add(&mut self, i: usize, j: usize, authors: u64, pubs: u64) {
        if i <= self.cap {
            self.n[i][j - 1] += authors;
            self.m[i][j - 1] += pubs;
        } else {
            self.overflow_n[j - 1] += authors;
            self.overflow_m[j - 1] += pubs;
        }
    }

    /// `t_j - t_1`.
    pub fn offset(&self, j: usize) -> f64 {
        f64::from(self.grid[j] - self.grid[1])
    }

    /// Column `j` whose interval ends in `year`.
    pub fn column_of(&self, year: i32) -> Option<usize> {
        self.grid
            .iter()
            .skip(1)
            .position(|&t| t == year)
            .map(|p| p + 1)
    }

    /// `m/n` for a usable cell (`n > 0`, `m > 0`).
    fn log_ratio(&self, i: usize, j: usize) -> Option<f64> {
        let (n, m) = (self.n(i, j), self.m(i, j));
        (n > 0 && m > 0).then(|| (m as f64 / n as f64).ln())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), BaselineError> {
        let mut w = csv_writer(out);
        w.write_record(["i", "j", "t_j", "n", "m"])?;
        for i in 0..=self.cap {
            for j in 1..=self.columns() {
                w.write_record([
                    i.to_string(),
                    j.to_string(),
                    self.grid[j].to_string(),
                    self.n(i, j).to_string(),
                    self.m(i, j).to_string(),
                ])?;
            }
        }
        for j in 1..=self.columns() {
            w.write_record([
                "overflow".to_string(),
                j.to_string(),
                self.grid[j].to_string(),
                self.overflow_n[j - 1].to_string(),
                self.overflow_m[j - 1].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

/// Annual grid `start, start+1, ..., start+columns`.
pub fn annual_grid(start: i32, columns: usize) -> Vec<i32> {
    (0..=columns as i32).map(|k| start + k).collect()
}

/// Tabulate `cohort` over `grid`. Authors above `cap` go to the overflow bucket.
pub fn build_partition(
    series: &SeriesSet,
    cohort: &[String],
    grid: &[i32],
    cap: usize,
) -> Result<PartitionTable, BaselineError> {
    let mut table = PartitionTable::empty(grid.to_vec(), cap)?;
    for id in cohort {
        let Some(s) = series.get(id) else {
            log::warn!("cohort author {id} has no series; skipped");
            continue;
        };
        for j in 1..=table.columns() {
            match (s.h(grid[j - 1]), s.h(grid[j])) {
                (Some(a), Some(b)) => table.add(a as usize, j, 1, u64::from(b - a)),
                _ => table.missing[j - 1] += 1,
            }
        }
    }
    Ok(table)
}

/// Least-squares line through `(x, y)`, as `(intercept, slope)`. Needs two
/// distinct abscissae.
pub fn ols(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

/// `log(m/n) = alpha + beta (t_j - t_1)` per level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelFit {
    pub alpha: f64,
    pub beta: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseFit {
    pub grid: Vec<i32>,
    pub window: usize,
    /// Indexed by level; entry 0 is always `None`.
    pub levels: Vec<Option<LevelFit>>,
    /// Cells with `n > 0` but `m = 0`, excluded from the regressions.
    pub dropped_zero_cells: usize,
}

impl PiecewiseFit {
    pub fn max_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), BaselineError> {
        let mut w = csv_writer(out);
        w.write_record(["i", "alpha", "beta", "cells"])?;
        for (i, f) in self.levels.iter().enumerate().skip(1) {
            match f {
                Some(f) => w.write_record([
                    i.to_string(),
                    f.alpha.to_string(),
                    f.beta.to_string(),
                    f.cells.to_string(),
                ])?,
                None => {
                    w.write_record([i.to_string(), String::new(), String::new(), "0".into()])?
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Fit every level `1..=cap` on columns `1..=window`.
pub fn fit_piecewise(table: &PartitionTable, window: usize) -> Result<PiecewiseFit, BaselineError> {
    if window < 2 || window > table.columns() {
        return Err(BaselineError::Params(format!(
            "fit window L={window} must lie in 2..={}",
            table.columns()
        )));
    }
    let mut levels = vec![None];
    let mut dropped = 0usize;
    let mut unfit = 0usize;
    for i in 1..=table.cap {
        let mut pts = Vec::new();
        for j in 1..=window {
            match table.log_ratio(i, j) {
                Some(y) => pts.push((table.offset(j), y)),
                None if table.n(i, j) > 0 => dropped += 1,
                None => {}
            }
        }
        let fit = ols(&pts).map(|(alpha, beta)| LevelFit {
            alpha,
            beta,
            cells: pts.len(),
        });
        unfit += usize::from(fit.is_none());
        levels.push(fit);
    }
    if unfit > 0 {
        log::warn!(
            "piecewise fit: {unfit} of {} levels have fewer than 2 usable cells",
            table.cap
        );
    }
    if dropped > 0 {
        log::info!("piecewise fit: dropped {dropped} cells with zero publications");
    }
    Ok(PiecewiseFit {
        grid: table.grid.clone(),
        window,
        levels,
        dropped_zero_cells: dropped,
    })
}

/// `lambda_ij = exp(alpha_i + beta_i (t_j - t_1))`.
pub fn predict_piecewise(fit: &PiecewiseFit, i: usize, j: usize) -> Result<f64, BaselineError> {
    let f = fit
        .levels
        .get(i)
        .copied()
        .flatten()
        .ok_or(BaselineError::UnfitLevel { level: i })?;
    let dt = f64::from(fit.grid[j] - fit.grid[1]);
    Ok((f.alpha + f.beta * dt).exp())
}

/// `log(m/n) = mu + upsilon log i` for column `j` over levels `1..=max_level`.
/// Returns `(mu, upsilon)` and the number of zero-publication cells dropped.
pub fn fit_loglog(
    table: &PartitionTable,
    j: usize,
    max_level: usize,
) -> (Option<(f64, f64)>, usize) {
    let mut pts = Vec::new();
    let mut dropped = 0usize;
    for i in 1..=max_level.min(table.cap) {
        match table.log_ratio(i, j) {
            Some(y) => pts.push(((i as f64).ln(), y)),
            None if table.n(i, j) > 0 => dropped += 1,
            None => {}
        }
    }
    (ols(&pts), dropped)
}

/// Which block of the grid a cell belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Part {
    I,
    II,
    III,
    IV,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedFit {
    pub grid: Vec<i32>,
    pub max_level: usize,
    pub test_cap: usize,
    pub k_split: usize,
    pub window: usize,
    /// Per-level fits for `i <= k_split` (index 0 unused).
    pub piecewise: Vec<Option<LevelFit>>,
    /// Per-column fits for `j <= window` (index 0 unused).
    pub loglog: Vec<Option<(f64, f64)>>,
    /// `lambda[i][j]` for `i in 1..=max_level`, `j in 1..=J` (index 0 unused).
    pub lambda: Vec<Vec<Option<f64>>>,
    /// Part IV routes: extrapolation in time of Part III rates, and log-log
    /// regression on Part II rates.
    pub route_a: Vec<Vec<Option<f64>>>,
    pub route_b: Vec<Vec<Option<f64>>>,
    pub dropped_zero_cells: usize,
}

impl CombinedFit {
    pub fn part(&self, i: usize, j: usize) -> Part {
        match (i <= self.k_split, j <= self.window) {
            (true, true) => Part::I,
            (true, false) => Part::II,
            (false, true) => Part::III,
            (false, false) => Part::IV,
        }
    }

    pub fn columns(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), BaselineError> {
        let mut w = csv_writer(out);
        w.write_record(["i", "j", "t_j", "part", "lambda", "route_a", "route_b"])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for i in 1..=self.max_level {
            for j in 1..=self.columns() {
                w.write_record([
                    i.to_string(),
                    j.to_string(),
                    self.grid[j].to_string(),
                    format!("{:?}", self.part(i, j)),
                    opt(self.lambda[i][j]),
                    opt(self.route_a[i][j]),
                    opt(self.route_b[i][j]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_coefficients_csv<W: Write>(&self, out: W) -> Result<(), BaselineError> {
        let mut w = csv_writer(out);
        w.write_record(["kind", "index", "intercept", "slope"])?;
        for (i, f) in self.piecewise.iter().enumerate().skip(1) {
            let (a, b) = f.map_or((String::new(), String::new()), |f| {
                (f.alpha.to_string(), f.beta.to_string())
            });
            w.write_record(["piecewise".to_string(), i.to_string(), a, b])?;
        }
        for (j, f) in self.loglog.iter().enumerate().skip(1) {
            let (a, b) = f.map_or((String::new(), String::new()), |(m, u)| {
                (m.to_string(), u.to_string())
            });
            w.write_record(["loglog".to_string(), j.to_string(), a, b])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parameters of the combined model: `I`, `I1`, `K` and the fit window `L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombinedParams {
    pub max_level: usize,
    pub test_cap: usize,
    pub k_split: usize,
    pub window: usize,
}

pub fn fit_combined(
    table: &PartitionTable,
    params: &CombinedParams,
) -> Result<CombinedFit, BaselineError> {
    let CombinedParams {
        max_level,
        test_cap,
        k_split,
        window,
    } = *params;
    let cols = table.columns();
    if max_level > table.cap {
        return Err(BaselineError::Params(format!(
            "I={max_level} exceeds the partition cap {}",
            table.cap
        )));
    }
    if k_split == 0 || k_split > max_level {
        return Err(BaselineError::Params(format!(
            "K={k_split} must lie in 1..=I ({max_level})"
        )));
    }
    if window < 2 || window > cols {
        return Err(BaselineError::Params(format!(
            "L={window} must lie in 2..={cols}"
        )));
    }
    if test_cap > max_level {
        return Err(BaselineError::Params(format!(
            "I1={test_cap} exceeds I={max_level}"
        )));
    }

    let pw = fit_piecewise(table, window)?;
    let piecewise: Vec<Option<LevelFit>> = pw.levels[..=k_split].to_vec();
    let mut loglog = vec![None];
    let mut dropped = 0usize;
    for j in 1..=window {
        let (fit, d) = fit_loglog(table, j, max_level);
        dropped += d;
        loglog.push(fit);
    }

    let mut lambda = vec![vec![None; cols + 1]; max_level + 1];
    let mut route_a = lambda.clone();
    let mut route_b = lambda.clone();
    // Parts I and II: per-level time trend.
    for i in 1..=k_split {
        for j in 1..=cols {
            lambda[i][j] = predict_piecewise(&pw, i, j).ok();
        }
    }
    // Part III: per-column log-log law.
    for i in k_split + 1..=max_level {
        for j in 1..=window {
            lambda[i][j] = loglog[j].map(|(mu, ups)| (mu + ups * (i as f64).ln()).exp());
        }
    }
    // Part IV, route A: extrapolate each level's Part III rates in time.
    for i in k_split + 1..=max_level {
        let pts: Vec<(f64, f64)> = (1..=window)
            .filter_map(|j| lambda[i][j].map(|l| (table.offset(j), l.ln())))
            .collect();
        if let Some((a, b)) = ols(&pts) {
            for j in window + 1..=cols {
                route_a[i][j] = Some((a + b * table.offset(j)).exp());
            }
        }
    }
    // Part IV, route B: log-log law fitted on each column's Part II rates.
    for j in window + 1..=cols {
        let pts: Vec<(f64, f64)> = (1..=k_split)
            .filter_map(|i| lambda[i][j].map(|l| ((i as f64).ln(), l.ln())))
            .collect();
        if let Some((mu, ups)) = ols(&pts) {
            for i in k_split + 1..=max_level {
                route_b[i][j] = Some((mu + ups * (i as f64).ln()).exp());
            }
        }
    }
    let mut single_route = 0usize;
    for i in k_split + 1..=max_level {
        for j in window + 1..=cols {
            lambda[i][j] = match (route_a[i][j], route_b[i][j]) {
                (Some(a), Some(b)) => Some(0.5 * (a + b)),
                (Some(x), None) | (None, Some(x)) => {
                    single_route += 1;
                    Some(x)
                }
                (None, None) => None,
            };
        }
    }
    if single_route > 0 {
        log::warn!("combined fit: {single_route} Part IV cells had only one route available");
    }
    Ok(CombinedFit {
        grid: table.grid.clone(),
        max_level,
        test_cap,
        k_split,
        window,
        piecewise,
        loglog,
        lambda,
        route_a,
        route_b,
        dropped_zero_cells: dropped,
    })
}

/// Anything that gives a Poisson rate for level `i` in column `j`.
pub trait RateModel {
    fn grid(&self) -> &[i32];
    fn rate(&self, i: usize, j: usize) -> Option<f64>;
    /// Largest level an author may start a forecast from.
    fn start_cap(&self) -> usize;
}

impl RateModel for PiecewiseFit {
    fn grid(&self) -> &[i32] {
        &self.grid
    }
    fn rate(&self, i: usize, j: usize) -> Option<f64> {
        predict_piecewise(self, i, j).ok()
    }
    fn start_cap(&self) -> usize {
        self.max_level()
    }
}

impl RateModel for CombinedFit {
    fn grid(&self) -> &[i32] {
        &self.grid
    }
    fn rate(&self, i: usize, j: usize) -> Option<f64> {
        self.lambda
            .get(i)
            .and_then(|row| row.get(j))
            .copied()
            .flatten()
    }
    fn start_cap(&self) -> usize {
        self.test_cap
    }
}

/// `floor(x + 0.5)`.
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Poisson zero-class complement, `1 - e^{-lambda}`.
pub fn publish_probability(lambda: f64) -> f64 {
    -(-lambda).exp_m1()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineTrajectory {
    pub author_id: String,
    pub t_x: i32,
    pub levels: Vec<f64>,
    pub p_publish: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Exclusions {
    /// Starting level 0 or above the start cap.
    pub start_level: usize,
    /// Reached a level with no rate during the rollout.
    pub no_rate: usize,
}

fn column(model: &impl RateModel, year: i32) -> Result<usize, BaselineError> {
    model
        .grid()
        .iter()
        .skip(1)
        .position(|&t| t == year)
        .map(|p| p + 1)
        .ok_or(BaselineError::YearOffGrid(year))
}

/// Iterate `i <- i + round(lambda)` from `h(t_x - 1)` over `t_x..=t_y`.
/// `Ok(None)` means the author was excluded.
pub fn baseline_forecast(
    model: &impl RateModel,
    series: &AuthorSeries,
    t_x: i32,
    t_y: i32,
) -> Result<Option<BaselineTrajectory>, BaselineError> {
    let start = series.h(t_x - 1).unwrap_or(0) as usize;
    if start == 0 || start > model.start_cap() {
        return Ok(None);
    }
    let mut level = start as f64;
    let mut out = BaselineTrajectory {
        author_id: series.author_id.clone(),
        t_x,
        levels: Vec::new(),
        p_publish: Vec::new(),
    };
    for year in t_x..=t_y {
        let j = column(model, year)?;
        let Some(lambda) = model.rate(level as usize, j) else {
            return Ok(None);
        };
        out.p_publish.push(publish_probability(lambda));
        level += round_half_up(lambda);
        out.levels.push(level);
    }
    Ok(Some(out))
}

/// Forecast every cohort author; returns trajectories sorted by author and
/// exclusion counts.
pub fn baseline_forecast_cohort(
    model: &impl RateModel,
    cohort: &SeriesSet,
    t_x: i32,
    t_y: i32,
) -> Result<(Vec<BaselineTrajectory>, Exclusions), BaselineError> {
    let mut out = Vec::new();
    let mut ex = Exclusions::default();
    for s in cohort.series.values() {
        let start = s.h(t_x - 1).unwrap_or(0) as usize;
        if start == 0 || start > model.start_cap() {
            ex.start_level += 1;
            continue;
        }
        match baseline_forecast(model, s, t_x, t_y)? {
            Some(t) => out.push(t),
            None => ex.no_rate += 1,
        }
    }
    if ex.start_level + ex.no_rate > 0 {
        log::info!(
            "baseline forecast excluded {} authors by starting level and {} for missing rates",
            ex.start_level,
            ex.no_rate
        );
    }
    Ok((out, ex))
}

/// One-step forecasts from the true level `h(y - 1)` for each `y` in
/// `t_x..=t_y`. Authors missing a rate in any year are excluded.
pub fn baseline_short_term(
    model: &impl RateModel,
    cohort: &SeriesSet,
    t_x: i32,
    t_y: i32,
) -> Result<(Vec<BaselineTrajectory>, Exclusions), BaselineError> {
    let mut out = Vec::new();
    let mut ex = Exclusions::default();
    'authors: for s in cohort.series.values() {
        let start = s.h(t_x - 1).unwrap_or(0) as usize;
        if start == 0 || start > model.start_cap() {
            ex.start_level += 1;
            continue;
        }
        let mut traj = BaselineTrajectory {
            author_id: s.author_id.clone(),
            t_x,
            levels: Vec::new(),
            p_publish: Vec::new(),
        };
        for year in t_x..=t_y {
            let j = column(model, year)?;
            let level = s.h(year - 1).unwrap_or(0);
            let Some(lambda) = model.rate(level as usize, j) else {
                ex.no_rate += 1;
                continue 'authors;
            };
            traj.p_publish.push(publish_probability(lambda));
            traj.levels.push(f64::from(level) + round_half_up(lambda));
        }
        out.push(traj);
    }
    Ok((out, ex))
}
