use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{auc_counts, ks_two_sample, s1_s2, AucCounts, EvalError, KsResult};
use crate::corpus::SeriesSet;
use crate::forecast::ForecastRow;

/// Which predicted value a report reads from a forecast row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimate {
    #[default]
    Realization,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub level_cap: usize,
    pub t_x: i32,
    pub t_y: i32,
    /// Years up to and including this one overlap the training data.
    pub in_sample_end: Option<i32>,
    pub estimate: Estimate,
}

impl ReportConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.level_cap == 0 {
            return Err(EvalError::Config("level_cap must be >= 1".into()));
        }
        if self.t_y < self.t_x {
            return Err(EvalError::Config(format!(
                "t_y {} precedes t_x {}",
                self.t_y, self.t_x
            )));
        }
        Ok(())
    }

    fn years(&self) -> impl Iterator<Item = i32> {
        self.t_x..=self.t_y
    }

    fn in_sample(&self, year: i32) -> bool {
        self.in_sample_end.is_some_and(|e| year <= e)
    }
}

/// Author admitted to a report: level `h(t_x - 1)` in `1..=level_cap` and a
/// forecast row with known truth for every report year.
#[derive(Debug, Clone)]
struct Tested {
    level: usize,
    truth: Vec<f64>,
    predicted: Vec<f64>,
    p_publish: Vec<f64>,
}

fn tested_authors(
    rows: &[ForecastRow],
    truth: &SeriesSet,
    cfg: &ReportConfig,
) -> BTreeMap<String, Tested> {
    let years = (cfg.t_y - cfg.t_x + 1) as usize;
    let mut by_author: BTreeMap<&str, Vec<Option<&ForecastRow>>> = BTreeMap::new();
    for r in rows {
        if r.year < cfg.t_x || r.year > cfg.t_y {
            continue;
        }
        by_author
            .entry(r.author_id.as_str())
            .or_insert_with(|| vec![None; years])[(r.year - cfg.t_x) as usize] = Some(r);
    }
    let mut out = BTreeMap::new();
    for (id, slots) in by_author {
        let Some(series) = truth.get(id) else {
            continue;
        };
        let level = series.h(cfg.t_x - 1).unwrap_or(0) as usize;
        if level == 0 || level > cfg.level_cap {
            continue;
        }
        let mut t = Tested {
            level,
            truth: Vec::with_capacity(years),
            predicted: Vec::with_capacity(years),
            p_publish: Vec::with_capacity(years),
        };
        let mut complete = true;
        for (k, slot) in slots.iter().enumerate() {
            match (slot, series.h(cfg.t_x + k as i32)) {
                (Some(r), Some(h)) => {
                    t.truth.push(f64::from(h));
                    t.predicted.push(match cfg.estimate {
                        Estimate::Realization => r.h_hat_realization,
                        Estimate::Mean => r.h_hat_mean,
                    });
                    t.p_publish.push(r.p_publish);
                }
                _ => complete = false,
            }
        }
        if complete {
            out.insert(id.to_string(), t);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendCell {
    pub level: usize,
    pub year: i32,
    pub authors: usize,
    /// Mean true cumulative count.
    pub n: Option<f64>,
    /// Mean predicted cumulative count.
    pub m: Option<f64>,
    pub s1: Option<f64>,
    pub s2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendReport {
    /// Level-major, one cell per `(level, year)`.
    pub cells: Vec<TrendCell>,
    /// Per year: tested authors, pooled `s1` and `s2`.
    pub pooled: Vec<(i32, usize, Option<f64>, Option<f64>)>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn trend_from(tested: &BTreeMap<String, Tested>, cfg: &ReportConfig) -> TrendReport {
    let mut cells = Vec::new();
    for level in 1..=cfg.level_cap {
        let group: Vec<&Tested> = tested.values().filter(|t| t.level == level).collect();
        for (k, year) in cfg.years().enumerate() {
            let tr: Vec<f64> = group.iter().map(|t| t.truth[k]).collect();
            let pr: Vec<f64> = group.iter().map(|t| t.predicted[k]).collect();
            let (s1, s2) = s1_s2(&tr, &pr);
            cells.push(TrendCell {
                level,
                year,
                authors: group.len(),
                n: mean(&tr),
                m: mean(&pr),
                s1,
                s2,
            });
        }
    }
    let pooled = cfg
        .years()
        .enumerate()
        .map(|(k, year)| {
            let tr: Vec<f64> = tested.values().map(|t| t.truth[k]).collect();
            let pr: Vec<f64> = tested.values().map(|t| t.predicted[k]).collect();
            let (s1, s2) = s1_s2(&tr, &pr);
            (year, tr.len(), s1, s2)
        })
        .collect();
    TrendReport { cells, pooled }
}

/// Group means `n(i, y)`, `m(i, y)` and per-year correlations.
pub fn trend_report(
    rows: &[ForecastRow],
    truth: &SeriesSet,
    cfg: &ReportConfig,
) -> Result<TrendReport, EvalError> {
    cfg.validate()?;
    Ok(trend_from(&tested_authors(rows, truth, cfg), cfg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionReport {
    pub year: i32,
    /// `(count, true frequency, predicted frequency)` over the union of values.
    pub histogram: Vec<(u64, f64, f64)>,
    pub ks: Option<KsResult>,
}

fn distribution_from(
    tested: &BTreeMap<String, Tested>,
    cfg: &ReportConfig,
    year: i32,
) -> Result<DistributionReport, EvalError> {
    let k = (year - cfg.t_x) as usize;
    let tr: Vec<u64> = tested.values().map(|t| t.truth[k] as u64).collect();
    let pr: Vec<u64> = tested
        .values()
        .map(|t| {
            if !t.predicted[k].is_finite() || t.predicted[k] < 0.0 {
                Err(EvalError::NonFinite)
            } else {
                Ok((t.predicted[k] + 0.5).floor() as u64)
            }
        })
        .collect::<Result<_, _>>()?;
    let values: BTreeSet<u64> = tr.iter().chain(&pr).copied().collect();
    let n = tr.len().max(1) as f64;
    let histogram = values
        .into_iter()
        .map(|v| {
            let ft = tr.iter().filter(|&&x| x == v).count() as f64 / n;
            let fp = pr.iter().filter(|&&x| x == v).count() as f64 / n;
            (v, ft, fp)
        })
        .collect();
    let ks = if tr.is_empty() {
        None
    } else {
        let a: Vec<f64> = tr.iter().map(|&v| v as f64).collect();
        let b: Vec<f64> = pr.iter().map(|&v| v as f64).collect();
        Some(ks_two_sample(&a, &b)?)
    };
    Ok(DistributionReport {
        year,
        histogram,
        ks,
    })
}

/// True versus predicted (rounded half-up) count distributions in `year`.
pub fn distribution_report(
    rows: &[ForecastRow],
    truth: &SeriesSet,
    cfg: &ReportConfig,
    year: i32,
) -> Result<DistributionReport, EvalError> {
    cfg.validate()?;
    if year < cfg.t_x || year > cfg.t_y {
        return Err(EvalError::Config(format!(
            "year {year} outside {}..={}",
            cfg.t_x, cfg.t_y
        )));
    }
    distribution_from(&tested_authors(rows, truth, cfg), cfg, year)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucCell {
    pub level: usize,
    pub year: i32,
    pub counts: AucCounts,
}

fn auc_from(
    tested: &BTreeMap<String, Tested>,
    truth: &SeriesSet,
    cfg: &ReportConfig,
) -> Result<(Vec<AucCell>, Vec<AucCounts>), EvalError> {
    let mut cells = Vec::new();
    let mut pooled = Vec::new();
    let mut per_level: Vec<Vec<(Vec<bool>, Vec<f64>)>> =
        vec![vec![(Vec::new(), Vec::new()); (cfg.t_y - cfg.t_x + 1) as usize]; cfg.level_cap + 1];
    for (k, year) in cfg.years().enumerate() {
        let (mut all_o, mut all_p) = (Vec::new(), Vec::new());
        for (id, t) in tested {
            let series = truth.get(id).expect("tested authors have truth");
            let (Some(before), Some(now)) = (series.h(year - 1), series.h(year)) else {
                continue;
            };
            let level = before as usize;
            if level == 0 || level > cfg.level_cap {
                continue;
            }
            let slot = &mut per_level[level][k];
            slot.0.push(now > before);
            slot.1.push(t.p_publish[k]);
            all_o.push(now > before);
            all_p.push(t.p_publish[k]);
        }
        pooled.push(auc_counts(&all_o, &all_p)?);
    }
    for (level, by_year) in per_level.iter().enumerate().skip(1) {
        for (k, (o, p)) in by_year.iter().enumerate() {
            cells.push(AucCell {
                level,
                year: cfg.t_x + k as i32,
                counts: auc_counts(o, p)?,
            });
        }
    }
    Ok((cells, pooled))
}

/// Tie-aware AUC per `(i, y)` with `i = h(y - 1)`, plus one pooled value per year.
pub fn auc_report(
    rows: &[ForecastRow],
    truth: &SeriesSet,
    cfg: &ReportConfig,
) -> Result<(Vec<AucCell>, Vec<AucCounts>), EvalError> {
    cfg.validate()?;
    auc_from(&tested_authors(rows, truth, cfg), truth, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct YearSummary {
    pub year: i32,
    pub authors: usize,
    pub s1: Option<f64>,
    pub s2: Option<f64>,
    pub ks_statistic: Option<f64>,
    pub ks_p_value: Option<f64>,
    pub auc_short: Option<f64>,
    pub auc_long: Option<f64>,
    pub in_sample: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reports {
    pub trend: TrendReport,
    pub distributions: Vec<DistributionReport>,
    pub auc_short: Option<Vec<AucCell>>,
    pub auc_long: Vec<AucCell>,
    pub summary: Vec<YearSummary>,
}

/// All reports for a long-horizon forecast file and, optionally, a one-step
/// file on true inputs (used for the short-term AUC).
pub fn build_reports(
    long: &[ForecastRow],
    short: Option<&[ForecastRow]>,
    truth: &SeriesSet,
    cfg: &ReportConfig,
) -> Result<Reports, EvalError> {
    cfg.validate()?;
    let tested = tested_authors(long, truth, cfg);
    if tested.is_empty() {
        log::warn!(
            "no tested authors: none has level 1..={} in {} with complete forecasts",
            cfg.level_cap,
            cfg.t_x - 1
        );
    }
    let trend = trend_from(&tested, cfg);
    let distributions: Vec<DistributionReport> = cfg
        .years()
        .map(|y| distribution_from(&tested, cfg, y))
        .collect::<Result<_, _>>()?;
    let (auc_long, pooled_long) = auc_from(&tested, truth, cfg)?;
    let (auc_short, pooled_short) = match short {
        Some(rows) => {
            let t = tested_authors(rows, truth, cfg);
            let (cells, pooled) = auc_from(&t, truth, cfg)?;
            (Some(cells), Some(pooled))
        }
        None => (None, None),
    };
    let summary = cfg
        .years()
        .enumerate()
        .map(|(k, year)| {
            let (_, authors, s1, s2) = trend.pooled[k];
            let ks = distributions[k].ks;
            YearSummary {
                year,
                authors,
                s1,
                s2,
                ks_statistic: ks.map(|k| k.statistic),
                ks_p_value: ks.map(|k| k.p_value),
                auc_short: pooled_short.as_ref().and_then(|p| p[k].auc()),
                auc_long: pooled_long[k].auc(),
                in_sample: cfg.in_sample(year),
            }
        })
        .collect();
    Ok(Reports {
        trend,
        distributions,
        auc_short,
        auc_long,
        summary,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

fn auc_csv(cells: &[AucCell]) -> Result<Vec<u8>, EvalError> {
    let mut w = writer(Vec::new());
    w.write_record(["i", "y", "m1", "m2", "m3", "m", "auc"])?;
    for c in cells {
        let k = c.counts;
        w.write_record([
            c.level.to_string(),
            c.year.to_string(),
            k.m1.to_string(),
            k.m2.to_string(),
            k.m3.to_string(),
            k.m.to_string(),
            opt(k.auc()),
        ])?;
    }
    into_bytes(w)
}

fn into_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>, EvalError> {
    w.into_inner().map_err(|e| EvalError::Io(e.into_error()))
}

impl Reports {
    /// Report files as `(file name, contents)`.
    pub fn files(&self) -> Result<Vec<(String, Vec<u8>)>, EvalError> {
        let mut files = Vec::new();

        let pooled: BTreeMap<i32, (Option<f64>, Option<f64>)> = self
            .trend
            .pooled
            .iter()
            .map(|&(y, _, s1, s2)| (y, (s1, s2)))
            .collect();
        let mut w = writer(Vec::new());
        w.write_record(["i", "y", "n", "m", "s1", "s2"])?;
        for c in &self.trend.cells {
            let (s1, s2) = pooled[&c.year];
            w.write_record([
                c.level.to_string(),
                c.year.to_string(),
                opt(c.n),
                opt(c.m),
                opt(s1),
                opt(s2),
            ])?;
        }
        files.push(("trend.csv".to_string(), into_bytes(w)?));

        let mut w = writer(Vec::new());
        w.write_record(["i", "y", "authors", "s1", "s2"])?;
        for c in &self.trend.cells {
            w.write_record([
                c.level.to_string(),
                c.year.to_string(),
                c.authors.to_string(),
                opt(c.s1),
                opt(c.s2),
            ])?;
        }
        files.push(("trend_by_level.csv".to_string(), into_bytes(w)?));

        for d in &self.distributions {
            let mut w = writer(Vec::new());
            w.write_record(["count", "true_freq", "pred_freq", "D", "p"])?;
            for &(v, ft, fp) in &d.histogram {
                w.write_record([
                    v.to_string(),
                    ft.to_string(),
                    fp.to_string(),
                    opt(d.ks.map(|k| k.statistic)),
                    opt(d.ks.map(|k| k.p_value)),
                ])?;
            }
            files.push((format!("dist_{}.csv", d.year), into_bytes(w)?));
        }

        if let Some(cells) = &self.auc_short {
            files.push(("auc.csv".to_string(), auc_csv(cells)?));
        }
        files.push(("auc_long.csv".to_string(), auc_csv(&self.auc_long)?));

        let mut w = writer(Vec::new());
        w.write_record([
            "y",
            "authors",
            "s1",
            "s2",
            "ks_d",
            "ks_p",
            "auc_short",
            "auc_long",
            "in_sample",
        ])?;
        for s in &self.summary {
            w.write_record([
                s.year.to_string(),
                s.authors.to_string(),
                opt(s.s1),
                opt(s.s2),
                opt(s.ks_statistic),
                opt(s.ks_p_value),
                opt(s.auc_short),
                opt(s.auc_long),
                s.in_sample.to_string(),
            ])?;
        }
        files.push(("summary.csv".to_string(), into_bytes(w)?));
        Ok(files)
    }
}
