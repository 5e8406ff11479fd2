//! The six pipeline stages. Each reads its inputs from disk and writes CSV
//! outputs atomically.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use prodcast_core::baselines::{
    annual_grid, baseline_forecast_cohort, baseline_short_term, build_partition, fit_combined,
    fit_piecewise, BaselineTrajectory, Exclusions, PartitionTable, RateModel,
};
use prodcast_core::corpus::{
    build_series, make_windows, parse_records, read_series_cache, select_cohort, synth_corpus,
    write_records_csv, write_series_cache, Format, SeriesSet, WindowSample,
};
use prodcast_core::evaluation::build_reports;
use prodcast_core::forecast::{
    forecast_cohort, forecast_rows, forecast_short_term, mean_annual_increment, read_forecast_csv,
    write_forecast_csv, ForecastRow, HybridModel, Mode,
};
use prodcast_core::recurrent::{
    read_checkpoint, train, write_checkpoint, CvReport, TrainedNetwork,
};

use crate::config::{BaselineModel, RunConfig};

/// Bad invocation or missing configuration; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CV_REPORT_FILE: &str = "cv_report.csv";
pub const CV_CURVES_FILE: &str = "cv_curves.csv";
pub const FORECAST_FILE: &str = "forecast.csv";
pub const SHORT_FORECAST_FILE: &str = "forecast_short.csv";

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| e.error)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

pub fn load_cache(path: &Path) -> Result<SeriesSet> {
    read_series_cache(open(path)?)
        .with_context(|| format!("reading series cache {}", path.display()))
}

/// Parse records, build series over the configured span and write the cache.
/// Returns the number of authors written.
pub fn ingest(
    cfg: &RunConfig,
    input: &Path,
    format: Option<Format>,
    output: &Path,
) -> Result<usize> {
    let format = match format {
        Some(f) => f,
        None => cfg.data.format.parse().map_err(|e: String| UsageError(e))?,
    };
    let parsed = parse_records(open(input)?, format)
        .with_context(|| format!("parsing {}", input.display()))?;
    for r in parsed.rejected.iter().take(10) {
        log::warn!("line {}: {}", r.line, r.reason);
    }
    let set = build_series(&parsed.records, cfg.data.start_year, cfg.data.end_year)?;
    let mut buf = Vec::new();
    write_series_cache(&set, &mut buf)?;
    write_atomic(output, &buf)?;
    log::info!(
        "{} records, {} rejected, {} authors over {}..={}",
        parsed.records.len(),
        parsed.rejected.len(),
        set.len(),
        cfg.data.start_year,
        cfg.data.end_year
    );
    Ok(set.len())
}

/// Write the synthetic record file described by the `[synth]` section.
pub fn synth(cfg: &RunConfig, output: &Path) -> Result<usize> {
    let sc = cfg
        .synth_config()
        .ok_or_else(|| UsageError("the configuration has no [synth] section".into()))?;
    let records = synth_corpus(&sc)?;
    let mut buf = Vec::new();
    write_records_csv(&records, &mut buf)?;
    write_atomic(output, &buf)?;
    log::info!(
        "{} synthetic records for {} authors",
        records.len(),
        sc.n_authors
    );
    Ok(records.len())
}

/// Series of the authors active in the cohort's activity year.
pub fn cohort(cfg: &RunConfig, set: &SeriesSet) -> Result<SeriesSet> {
    let ids = select_cohort(set, &cfg.cohort)?;
    log::info!(
        "cohort of {} authors active in {}",
        ids.len(),
        cfg.cohort.activity_year
    );
    Ok(set.subset(ids.iter()))
}

/// Windows ending the year before `train_end`, targeting `train_end`.
pub fn training_samples(cfg: &RunConfig, cohort: &SeriesSet) -> Result<Vec<WindowSample>> {
    let end = cfg.cohort.train_end;
    Ok(make_windows(
        cohort,
        end - 1,
        cfg.recurrent.window_length,
        end,
    )?)
}

pub fn fit_network(cfg: &RunConfig, set: &SeriesSet) -> Result<(TrainedNetwork, CvReport)> {
    let cohort = cohort(cfg, set)?;
    let samples = training_samples(cfg, &cohort)?;
    let (net, report) = train(&samples, &cfg.recurrent, &cfg.train, cfg.seed)?;
    log::info!(
        "trained on {} samples: mean validation MSE {:.4}, {} epochs selected",
        samples.len(),
        report.mean_validation_mse,
        report.selected_epochs
    );
    Ok((net, report))
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

pub fn cv_report_csv(report: &CvReport) -> Result<Vec<u8>> {
    csv_bytes(
        &[
            "fold",
            "train_size",
            "validation_size",
            "epochs_run",
            "best_epoch",
            "best_validation_mse",
        ],
        report.folds.iter().map(|f| {
            vec![
                f.fold.to_string(),
                f.train_size.to_string(),
                f.validation_size.to_string(),
                f.validation_curve.len().to_string(),
                f.best_epoch.to_string(),
                f.best_validation_mse.to_string(),
            ]
        }),
    )
}

pub fn cv_curves_csv(report: &CvReport) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for f in &report.folds {
        for (curve, values) in [
            ("train", &f.train_curve),
            ("validation", &f.validation_curve),
        ] {
            for (e, v) in values.iter().enumerate() {
                rows.push(vec![
                    curve.to_string(),
                    f.fold.to_string(),
                    (e + 1).to_string(),
                    v.to_string(),
                ]);
            }
        }
    }
    for (e, v) in report.final_train_curve.iter().enumerate() {
        rows.push(vec![
            "final".to_string(),
            String::new(),
            (e + 1).to_string(),
            v.to_string(),
        ]);
    }
    csv_bytes(&["curve", "fold", "epoch", "mse"], rows)
}

pub fn cmd_train(cfg: &RunConfig, cache: &Path, out_dir: &Path) -> Result<CvReport> {
    let set = load_cache(cache)?;
    let (net, report) = fit_network(cfg, &set)?;
    let mut ckpt = Vec::new();
    write_checkpoint(&mut ckpt, &net)?;
    write_atomic(&out_dir.join(CHECKPOINT_FILE), &ckpt)?;
    write_atomic(&out_dir.join(CV_REPORT_FILE), &cv_report_csv(&report)?)?;
    write_atomic(&out_dir.join(CV_CURVES_FILE), &cv_curves_csv(&report)?)?;
    Ok(report)
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedNetwork> {
    read_checkpoint(open(path)?).with_context(|| format!("reading checkpoint {}", path.display()))
}

/// The configured mode, resolving bare `const_poisson` to the cohort's mean
/// annual increment over the training window years.
pub fn resolve_mode(cfg: &RunConfig, cohort: &SeriesSet) -> Result<Mode> {
    if let Some(m) = cfg.parse_mode()? {
        return Ok(m);
    }
    let last = cfg.cohort.train_end;
    let first = last - cfg.recurrent.window_length as i32 + 1;
    let c = mean_annual_increment(cohort.series.values(), first, last);
    log::info!("const_poisson constant {c:.4} from mean annual increment over {first}..={last}");
    Ok(Mode::ConstPoisson(c))
}

/// Long-horizon and one-step forecast rows for the cohort.
pub fn forecast_with(
    cfg: &RunConfig,
    set: &SeriesSet,
    network: TrainedNetwork,
) -> Result<(Vec<ForecastRow>, Vec<ForecastRow>)> {
    let cohort = cohort(cfg, set)?;
    let mode = resolve_mode(cfg, &cohort)?;
    let model = HybridModel::new(network, cfg.powerlaw, mode)?;
    let fc = cfg.forecast_config();
    let long = forecast_cohort(&model, &cohort, &fc, false)?;
    let short = forecast_short_term(&model, &cohort, &fc)?;
    Ok((forecast_rows(&long, set), forecast_rows(&short, set)))
}

fn forecast_bytes(rows: &[ForecastRow]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_forecast_csv(rows, &mut buf)?;
    Ok(buf)
}

pub fn cmd_forecast(
    cfg: &RunConfig,
    cache: &Path,
    checkpoint: &Path,
    out_dir: &Path,
) -> Result<()> {
    let set = load_cache(cache)?;
    let network = load_checkpoint(checkpoint)?;
    if network.weights.spec.window_length != cfg.recurrent.window_length {
        log::warn!(
            "checkpoint window length {} differs from the configured {}",
            network.weights.spec.window_length,
            cfg.recurrent.window_length
        );
    }
    let (long, short) = forecast_with(cfg, &set, network)?;
    write_atomic(&out_dir.join(FORECAST_FILE), &forecast_bytes(&long)?)?;
    write_atomic(&out_dir.join(SHORT_FORECAST_FILE), &forecast_bytes(&short)?)?;
    Ok(())
}

fn baseline_rows(trajectories: &[BaselineTrajectory], truth: &SeriesSet) -> Vec<ForecastRow> {
    let mut rows = Vec::new();
    for t in trajectories {
        let series = truth.get(&t.author_id);
        for (k, (&level, &p)) in t.levels.iter().zip(&t.p_publish).enumerate() {
            let year = t.t_x + k as i32;
            rows.push(ForecastRow {
                author_id: t.author_id.clone(),
                year,
                h_true: series.and_then(|s| s.h(year)),
                h_hat_realization: level,
                h_hat_mean: level,
                p_publish: p,
            });
        }
    }
    rows
}

fn log_exclusions(what: &str, ex: Exclusions) {
    log::info!(
        "{what}: excluded {} by starting level, {} for missing rates",
        ex.start_level,
        ex.no_rate
    );
}

fn baseline_forecasts(
    cfg: &RunConfig,
    model: &impl RateModel,
    cohort: &SeriesSet,
    truth: &SeriesSet,
) -> Result<[Vec<u8>; 2]> {
    let (t_x, t_y) = (cfg.forecast.t_x, cfg.forecast.t_y);
    let (long, ex) = baseline_forecast_cohort(model, cohort, t_x, t_y)?;
    log_exclusions("long-horizon baseline", ex);
    let (short, ex) = baseline_short_term(model, cohort, t_x, t_y)?;
    log_exclusions("one-step baseline", ex);
    Ok([
        forecast_bytes(&baseline_rows(&long, truth))?,
        forecast_bytes(&baseline_rows(&short, truth))?,
    ])
}

/// Files written by the baseline stage, as `(name, bytes)`.
pub fn baseline_files(
    cfg: &RunConfig,
    set: &SeriesSet,
    model: BaselineModel,
) -> Result<Vec<(String, Vec<u8>)>> {
    let cohort = cohort(cfg, set)?;
    let ids: Vec<String> = cohort.series.keys().cloned().collect();
    let grid = annual_grid(cfg.baseline.grid_start, cfg.baseline.columns);
    let partition =
        |cap: usize| -> Result<PartitionTable> { Ok(build_partition(set, &ids, &grid, cap)?) };
    let mut files = Vec::new();
    let table_bytes = |t: &PartitionTable| -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        t.write_csv(&mut buf)?;
        Ok(buf)
    };
    let forecasts = match model {
        BaselineModel::Piecewise => {
            let table = partition(cfg.baseline.max_level)?;
            files.push(("partition.csv".to_string(), table_bytes(&table)?));
            let fit = fit_piecewise(&table, cfg.baseline.window)?;
            let mut buf = Vec::new();
            fit.write_csv(&mut buf)?;
            files.push(("piecewise_fit.csv".to_string(), buf));
            baseline_forecasts(cfg, &fit, &cohort, set)?
        }
        BaselineModel::Combined => {
            let params = cfg.combined_params();
            let table = partition(params.max_level)?;
            files.push(("partition.csv".to_string(), table_bytes(&table)?));
            let fit = fit_combined(&table, &params)?;
            let mut buf = Vec::new();
            fit.write_csv(&mut buf)?;
            files.push(("combined_lambda.csv".to_string(), buf));
            let mut buf = Vec::new();
            fit.write_coefficients_csv(&mut buf)?;
            files.push(("combined_coefficients.csv".to_string(), buf));
            baseline_forecasts(cfg, &fit, &cohort, set)?
        }
    };
    let [long, short] = forecasts;
    files.push((FORECAST_FILE.to_string(), long));
    files.push((SHORT_FORECAST_FILE.to_string(), short));
    Ok(files)
}

pub fn cmd_baseline(
    cfg: &RunConfig,
    cache: &Path,
    model: BaselineModel,
    out_dir: &Path,
) -> Result<()> {
    let set = load_cache(cache)?;
    for (name, bytes) in baseline_files(cfg, &set, model)? {
        write_atomic(&out_dir.join(name), &bytes)?;
    }
    Ok(())
}

pub fn read_forecast(path: &Path) -> Result<Vec<ForecastRow>> {
    read_forecast_csv(open(path)?).with_context(|| format!("reading forecast {}", path.display()))
}

/// Report files for a forecast (and optional one-step forecast) against the
/// truth in `set`.
pub fn report_files(
    cfg: &RunConfig,
    long: &[ForecastRow],
    short: Option<&[ForecastRow]>,
    set: &SeriesSet,
) -> Result<Vec<(String, Vec<u8>)>> {
    let reports = build_reports(long, short, set, &cfg.report_config())?;
    for s in &reports.summary {
        log::info!(
            "{}: {} authors, s2 {}, KS p {}",
            s.year,
            s.authors,
            s.s2.map_or("-".into(), |v| format!("{v:.4}")),
            s.ks_p_value.map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    Ok(reports.files()?)
}

pub fn cmd_report(
    cfg: &RunConfig,
    forecast: &Path,
    short: Option<&PathBuf>,
    cache: &Path,
    out_dir: &Path,
) -> Result<()> {
    let set = load_cache(cache)?;
    let long = read_forecast(forecast)?;
    let short = short.map(|p| read_forecast(p)).transpose()?;
    for (name, bytes) in report_files(cfg, &long, short.as_deref(), &set)? {
        write_atomic(&out_dir.join(name), &bytes)?;
    }
    Ok(())
}
