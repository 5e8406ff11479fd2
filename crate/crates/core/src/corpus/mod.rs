//! Bibliographic records in, per-author cumulative publication series out.
//!
//! A corpus is a flat list of `(author, year)` incidences: a paper with `k`
//! authors contributes `k` records. From those we build, for every author, the
//! cumulative count `h(t)` of their publications from the base year through
//! year `t`, select cohorts of authors active in a given year, and cut the
//! fixed-length windows the recurrent predictor consumes.

mod cache;
mod parse;
mod synth;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{read_series_cache, write_series_cache};
pub use parse::{parse_records, write_records_csv, Format, ParseOutcome, RejectedRecord};
pub use synth::{author_name, synth_corpus, PlantActive, RateDist, SynthConfig, SynthLaw};

pub const MIN_YEAR: i32 = 1900;
pub const MAX_YEAR: i32 = 2100;
pub const DEFAULT_WINDOW_LENGTH: usize = 12;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("invalid year range: start {start} > end {end}")]
    YearRange { start: i32, end: i32 },
    #[error("invalid cohort spec: {0}")]
    Cohort(String),
    #[error("invalid window request: {0}")]
    Window(String),
    #[error("invalid synthetic corpus config: {0}")]
    Synth(String),
}

impl CorpusError {
    pub(crate) fn malformed(line: u64, message: impl Into<String>) -> Self {
        Self::Malformed {
            line,
            message: message.into(),
        }
    }
}

/// One authorship incidence.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicationRecord {
    pub author_id: String,
    pub year: i32,
}

impl PublicationRecord {
    /// Validates the year range and trims the author id.
    pub fn new(author_id: &str, year: i32) -> Result<Self, String> {
        let author_id = author_id.trim();
        if author_id.is_empty() {
            return Err("empty author id".into());
        }
        if !(MIN_YEAR..=MAX_YEAR).contains(&year) {
            return Err(format!("year {year} outside [{MIN_YEAR}, {MAX_YEAR}]"));
        }
        Ok(Self {
            author_id: author_id.to_string(),
            year,
        })
    }
}

/// Cumulative publication counts of one author, one entry per year from
/// `base_year` on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthorSeries {
    pub author_id: String,
    pub base_year: i32,
    pub counts: Vec<u32>,
}

impl AuthorSeries {
    pub fn end_year(&self) -> i32 {
        self.base_year + self.counts.len() as i32 - 1
    }

    /// `h(year)`: zero before the base year, `None` past the end.
    pub fn h(&self, year: i32) -> Option<u32> {
        if year < self.base_year {
            Some(0)
        } else if year > self.end_year() {
            None
        } else {
            Some(self.counts[(year - self.base_year) as usize])
        }
    }

    /// Publications in `year` alone.
    pub fn annual(&self, year: i32) -> Option<u32> {
        Some(self.h(year)? - self.h(year - 1)?)
    }

    pub fn total(&self) -> u32 {
        self.counts.last().copied().unwrap_or(0)
    }
}

/// All author series over a common year range, keyed by author id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeriesSet {
    pub start_year: i32,
    pub end_year: i32,
    pub series: BTreeMap<String, AuthorSeries>,
    /// Records dropped because they precede `start_year`.
    pub dropped_before_start: usize,
    /// Records dropped because they follow `end_year`.
    pub dropped_after_end: usize,
}

impl SeriesSet {
    pub fn get(&self, author_id: &str) -> Option<&AuthorSeries> {
        self.series.get(author_id)
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// Restrict to the given authors, keeping the year range.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a String>) -> SeriesSet {
        let series = ids
            .into_iter()
            .filter_map(|id| self.series.get(id).map(|s| (id.clone(), s.clone())))
            .collect();
        SeriesSet {
            start_year: self.start_year,
            end_year: self.end_year,
            series,
            dropped_before_start: 0,
            dropped_after_end: 0,
        }
    }
}

/// Build `h(t)` for every author with at least one record in `[t0, t_end]`.
pub fn build_series(
    records: &[PublicationRecord],
    t0: i32,
    t_end: i32,
) -> Result<SeriesSet, CorpusError> {
    if t0 > t_end {
        return Err(CorpusError::YearRange {
            start: t0,
            end: t_end,
        });
    }
    let span = (t_end - t0 + 1) as usize;
    let mut annual: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    let (mut before, mut after) = (0usize, 0usize);
    for r in records {
        if r.year < t0 {
            before += 1;
            continue;
        }
        if r.year > t_end {
            after += 1;
            continue;
        }
        annual
            .entry(r.author_id.as_str())
            .or_insert_with(|| vec![0; span])[(r.year - t0) as usize] += 1;
    }
    if before > 0 {
        log::info!("dropped {before} records before {t0}");
    }
    let series = annual
        .into_iter()
        .map(|(id, mut counts)| {
            let mut acc = 0u32;
            for c in counts.iter_mut() {
                acc += *c;
                *c = acc;
            }
            (
                id.to_string(),
                AuthorSeries {
                    author_id: id.to_string(),
                    base_year: t0,
                    counts,
                },
            )
        })
        .collect();
    Ok(SeriesSet {
        start_year: t0,
        end_year: t_end,
        series,
        dropped_before_start: before,
        dropped_after_end: after,
    })
}

/// Authors active in `activity_year`, with training span `[train_start,
/// train_end]` and test span `(train_end, test_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub activity_year: i32,
    pub train_start: i32,
    pub train_end: i32,
    pub test_end: i32,
}

impl CohortSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let ok = self.train_start < self.activity_year
            && self.activity_year <= self.train_end
            && self.train_end < self.test_end;
        if ok {
            Ok(())
        } else {
            Err(CorpusError::Cohort(format!(
                "need train_start < activity_year <= train_end < test_end, got {} / {} / {} / {}",
                self.train_start, self.activity_year, self.train_end, self.test_end
            )))
        }
    }
}

/// Ids of the authors with at least one publication in the activity year.
pub fn select_cohort(set: &SeriesSet, spec: &CohortSpec) -> Result<Vec<String>, CorpusError> {
    spec.validate()?;
    let ids: Vec<String> = set
        .series
        .values()
        .filter(|s| s.annual(spec.activity_year).unwrap_or(0) >= 1)
        .map(|s| s.author_id.clone())
        .collect();
    if ids.is_empty() {
        log::warn!("cohort for activity year {} is empty", spec.activity_year);
    }
    Ok(ids)
}

/// Recurrent input window paired with its target.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub author_id: String,
    pub input: Vec<f64>,
    pub target: f64,
}

/// `h(last_input_year - len + 1) ..= h(last_input_year)`, zero before the base
/// year. `None` if the window runs past the end of the series.
pub fn window_input(series: &AuthorSeries, last_input_year: i32, len: usize) -> Option<Vec<f64>> {
    let first = last_input_year - len as i32 + 1;
    (first..=last_input_year)
        .map(|y| series.h(y).map(f64::from))
        .collect()
}

/// One training sample per author: the window ending at `last_input_year` and
/// the target `h(target_year)`.
pub fn make_windows(
    set: &SeriesSet,
    last_input_year: i32,
    window_length: usize,
    target_year: i32,
) -> Result<Vec<WindowSample>, CorpusError> {
    if window_length == 0 {
        return Err(CorpusError::Window("window length must be >= 1".into()));
    }
    if target_year <= last_input_year {
        return Err(CorpusError::Window(format!(
            "target year {target_year} must follow last input year {last_input_year}"
        )));
    }
    if last_input_year - window_length as i32 + 1 < set.start_year {
        log::debug!(
            "window starting {} precedes base year {}; left-padding with zeros",
            last_input_year - window_length as i32 + 1,
            set.start_year
        );
    }
    let mut out = Vec::with_capacity(set.len());
    for s in set.series.values() {
        match (
            window_input(s, last_input_year, window_length),
            s.h(target_year),
        ) {
            (Some(input), Some(target)) => out.push(WindowSample {
                author_id: s.author_id.clone(),
                input,
                target: f64::from(target),
            }),
            _ => log::warn!(
                "skipping {}: series ends {} before target {target_year}",
                s.author_id,
                s.end_year()
            ),
        }
    }
    Ok(out)
}
