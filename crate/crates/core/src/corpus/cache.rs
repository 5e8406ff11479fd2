//! Series cache: CSV rows `author_id,year,cumulative_count` sorted by
//! `(author_id, year)`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{AuthorSeries, CorpusError, SeriesSet};

pub fn write_series_cache<W: Write>(set: &SeriesSet, writer: W) -> Result<(), CorpusError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let io = |e: csv::Error| CorpusError::Io(e.into());
    w.write_record(["author_id", "year", "cumulative_count"])
        .map_err(io)?;
    for s in set.series.values() {
        for (k, c) in s.counts.iter().enumerate() {
            let year = s.base_year + k as i32;
            w.write_record([s.author_id.as_str(), &year.to_string(), &c.to_string()])
                .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a cache written by [`write_series_cache`]. Every author must cover
/// the same contiguous year range with non-decreasing counts.
pub fn read_series_cache<R: Read>(reader: R) -> Result<SeriesSet, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut series: BTreeMap<String, AuthorSeries> = BTreeMap::new();
    let mut row = csv::StringRecord::new();
    let mut first = true;
    loop {
        let more = rdr.read_record(&mut row).map_err(|e| {
            CorpusError::malformed(e.position().map(|p| p.line()).unwrap_or(0), e.to_string())
        })?;
        if !more {
            break;
        }
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if std::mem::take(&mut first) && &row[0] == "author_id" {
            continue;
        }
        if row.len() != 3 {
            return Err(CorpusError::malformed(
                line,
                "expected author_id,year,cumulative_count",
            ));
        }
        let year: i32 = row[1]
            .parse()
            .map_err(|_| CorpusError::malformed(line, format!("invalid year '{}'", &row[1])))?;
        let count: u32 = row[2]
            .parse()
            .map_err(|_| CorpusError::malformed(line, format!("invalid count '{}'", &row[2])))?;
        let s = series
            .entry(row[0].to_string())
            .or_insert_with(|| AuthorSeries {
                author_id: row[0].to_string(),
                base_year: year,
                counts: Vec::new(),
            });
        if year != s.end_year() + 1 {
            return Err(CorpusError::malformed(
                line,
                format!("years for '{}' are not contiguous and sorted", s.author_id),
            ));
        }
        if s.counts.last().is_some_and(|&prev| count < prev) {
            return Err(CorpusError::malformed(
                line,
                format!("cumulative count for '{}' decreases", s.author_id),
            ));
        }
        s.counts.push(count);
    }
    let mut ranges = series.values().map(|s| (s.base_year, s.end_year()));
    let (start_year, end_year) = ranges.next().unwrap_or((0, -1));
    if ranges.any(|r| r != (start_year, end_year)) {
        return Err(CorpusError::malformed(
            0,
            "authors cover different year ranges",
        ));
    }
    Ok(SeriesSet {
        start_year,
        end_year,
        series,
        dropped_before_start: 0,
        dropped_after_end: 0,
    })
}
