//! Record ingestion from the flat CSV interchange format and from dblp XML.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;
use std::sync::OnceLock;

use quick_xml::events::Event;
use quick_xml::Reader;

use super::{CorpusError, PublicationRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    DblpXml,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "dblp" | "xml" | "dblp_xml" | "dblp-xml" => Ok(Format::DblpXml),
            other => Err(format!("unknown record format '{other}'")),
        }
    }
}

/// A syntactically fine record that violates a record invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRecord {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseOutcome {
    pub records: Vec<PublicationRecord>,
    pub rejected: Vec<RejectedRecord>,
}

impl ParseOutcome {
    fn push(&mut self, line: u64, author: &str, year: i32) {
        match PublicationRecord::new(author, year) {
            Ok(r) => self.records.push(r),
            Err(reason) => self.rejected.push(RejectedRecord { line, reason }),
        }
    }
}

pub fn parse_records<R: BufRead>(reader: R, format: Format) -> Result<ParseOutcome, CorpusError> {
    let out = match format {
        Format::Csv => parse_csv(reader)?,
        Format::DblpXml => parse_dblp(reader)?,
    };
    if !out.rejected.is_empty() {
        log::warn!("rejected {} records", out.rejected.len());
    }
    Ok(out)
}

fn parse_csv<R: Read>(reader: R) -> Result<ParseOutcome, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = ParseOutcome::default();
    let mut row = csv::StringRecord::new();
    let mut first = true;
    loop {
        let more = rdr.read_record(&mut row).map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CorpusError::malformed(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if std::mem::take(&mut first) && &row[0] == "author_id" {
            continue;
        }
        if row.len() != 2 {
            return Err(CorpusError::malformed(
                line,
                format!("expected 2 fields (author_id,year), found {}", row.len()),
            ));
        }
        let year: i32 = row[1]
            .parse()
            .map_err(|_| CorpusError::malformed(line, format!("invalid year '{}'", &row[1])))?;
        out.push(line, &row[0], year);
    }
    Ok(out)
}

/// Canonical CSV form: `author_id,year` header, one incidence per line.
pub fn write_records_csv<W: Write>(
    records: &[PublicationRecord],
    writer: W,
) -> Result<(), CorpusError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let io = |e: csv::Error| CorpusError::Io(e.into());
    w.write_record(["author_id", "year"]).map_err(io)?;
    for r in records {
        w.write_record([r.author_id.as_str(), &r.year.to_string()])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

const RECORD_TAGS: [&[u8]; 7] = [
    b"article",
    b"inproceedings",
    b"proceedings",
    b"book",
    b"incollection",
    b"phdthesis",
    b"mastersthesis",
];

/// Counts the newlines the XML reader has consumed.
struct LineCounting<R> {
    inner: R,
    newlines: u64,
}

impl<R: BufRead> Read for LineCounting<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.newlines += buf[..n].iter().filter(|&&b| b == b'\n').count() as u64;
        Ok(n)
    }
}

impl<R: BufRead> BufRead for LineCounting<R> {
    fn fill_buf(&mut self) -> std::io::Result<&[u8]> {
        self.inner.fill_buf()
    }

    fn consume(&mut self, amt: usize) {
        if let Ok(buf) = self.inner.fill_buf() {
            let amt = amt.min(buf.len());
            self.newlines += buf[..amt].iter().filter(|&&b| b == b'\n').count() as u64;
        }
        self.inner.consume(amt);
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Author,
    Year,
}

struct OpenRecord {
    line: u64,
    authors: Vec<String>,
    year: Option<String>,
    field: Option<(Field, String)>,
}

fn parse_dblp<R: BufRead>(reader: R) -> Result<ParseOutcome, CorpusError> {
    let mut xml = Reader::from_reader(LineCounting {
        inner: reader,
        newlines: 0,
    });
    xml.config_mut().trim_text(false);
    xml.config_mut().check_end_names = true;
    let mut buf = Vec::new();
    let mut out = ParseOutcome::default();
    let mut open: Option<(Vec<u8>, OpenRecord)> = None;
    loop {
        let line = xml.get_ref().newlines + 1;
        let event = xml
            .read_event_into(&mut buf)
            .map_err(|e| CorpusError::malformed(xml.get_ref().newlines + 1, e.to_string()))?;
        match event {
            Event::Eof => break,
            Event::Start(e) => {
                let name = e.name().as_ref().to_vec();
                match &mut open {
                    None if RECORD_TAGS.contains(&name.as_slice()) => {
                        open = Some((
                            name,
                            OpenRecord {
                                line,
                                authors: Vec::new(),
                                year: None,
                                field: None,
                            },
                        ));
                    }
                    Some((_, rec)) if rec.field.is_none() => {
                        rec.field = match name.as_slice() {
                            b"author" => Some((Field::Author, String::new())),
                            b"year" => Some((Field::Year, String::new())),
                            _ => None,
                        };
                    }
                    _ => {}
                }
            }
            Event::Text(t) => {
                if let Some((
                    _,
                    OpenRecord {
                        field: Some((_, text)),
                        ..
                    },
                )) = &mut open
                {
                    text.push_str(&unescape(&decode(&t)));
                }
            }
            Event::CData(t) => {
                if let Some((
                    _,
                    OpenRecord {
                        field: Some((_, text)),
                        ..
                    },
                )) = &mut open
                {
                    text.push_str(&decode(&t));
                }
            }
            Event::End(e) => {
                let name = e.name().as_ref().to_vec();
                let Some((tag, rec)) = &mut open else {
                    buf.clear();
                    continue;
                };
                if *tag == name {
                    let (_, rec) = open.take().expect("open record");
                    finish_record(rec, &mut out)?;
                } else if let Some((kind, _)) = &rec.field {
                    let closes = matches!(
                        (kind, name.as_slice()),
                        (Field::Author, b"author") | (Field::Year, b"year")
                    );
                    if closes {
                        let (kind, text) = rec.field.take().expect("open field");
                        match kind {
                            Field::Author => rec.authors.push(text.trim().to_string()),
                            Field::Year => rec.year = Some(text.trim().to_string()),
                        }
                    }
                }
            }
            _ => {}
        }
        buf.clear();
    }
    Ok(out)
}

fn finish_record(rec: OpenRecord, out: &mut ParseOutcome) -> Result<(), CorpusError> {
    let Some(year) = rec.year else {
        out.rejected.push(RejectedRecord {
            line: rec.line,
            reason: "record has no year".into(),
        });
        return Ok(());
    };
    let year: i32 = year
        .parse()
        .map_err(|_| CorpusError::malformed(rec.line, format!("invalid year '{year}'")))?;
    for author in &rec.authors {
        out.push(rec.line, author, year);
    }
    Ok(())
}

/// UTF-8 when valid, otherwise ISO-8859-1 (the encoding dblp declares).
fn decode(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_string(),
        Err(_) => bytes.iter().map(|&b| b as char).collect(),
    }
}

const LATIN1_NAMES: [&str; 96] = [
    "nbsp", "iexcl", "cent", "pound", "curren", "yen", "brvbar", "sect", "uml", "copy", "ordf",
    "laquo", "not", "shy", "reg", "macr", "deg", "plusmn", "sup2", "sup3", "acute", "micro",
    "para", "middot", "cedil", "sup1", "ordm", "raquo", "frac14", "frac12", "frac34", "iquest",
    "Agrave", "Aacute", "Acirc", "Atilde", "Auml", "Aring", "AElig", "Ccedil", "Egrave", "Eacute",
    "Ecirc", "Euml", "Igrave", "Iacute", "Icirc", "Iuml", "ETH", "Ntilde", "Ograve", "Oacute",
    "Ocirc", "Otilde", "Ouml", "times", "Oslash", "Ugrave", "Uacute", "Ucirc", "Uuml", "Yacute",
    "THORN", "szlig", "agrave", "aacute", "acirc", "atilde", "auml", "aring", "aelig", "ccedil",
    "egrave", "eacute", "ecirc", "euml", "igrave", "iacute", "icirc", "iuml", "eth", "ntilde",
    "ograve", "oacute", "ocirc", "otilde", "ouml", "divide", "oslash", "ugrave", "uacute", "ucirc",
    "uuml", "yacute", "thorn", "yuml",
];

fn entity_table() -> &'static HashMap<&'static str, char> {
    static TABLE: OnceLock<HashMap<&'static str, char>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut m: HashMap<&'static str, char> = LATIN1_NAMES
            .iter()
            .enumerate()
            .map(|(i, n)| (*n, char::from_u32(160 + i as u32).expect("latin-1")))
            .collect();
        m.extend(
            [
                ('&', "amp"),
                ('<', "lt"),
                ('>', "gt"),
                ('"', "quot"),
                ('\'', "apos"),
            ]
            .map(|(c, n)| (n, c)),
        );
        m
    })
}

/// Resolves predefined, numeric and Latin-1 named entities. Unknown entities
/// are kept verbatim.
fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        let tail = &rest[amp..];
        let resolved = tail.find(';').and_then(|semi| {
            let name = &tail[1..semi];
            let c = if let Some(hex) = name.strip_prefix("#x").or_else(|| name.strip_prefix("#X")) {
                u32::from_str_radix(hex, 16).ok().and_then(char::from_u32)
            } else if let Some(dec) = name.strip_prefix('#') {
                dec.parse().ok().and_then(char::from_u32)
            } else {
                entity_table().get(name).copied()
            };
            c.map(|c| (c, semi))
        });
        match resolved {
            Some((c, semi)) => {
                out.push(c);
                rest = &tail[semi + 1..];
            }
            None => {
                out.push('&');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn csv(s: &str) -> Result<ParseOutcome, CorpusError> {
        parse_records(s.as_bytes(), Format::Csv)
    }

    #[test]
    fn csv_single_line() {
        let out = csv("a1,2005").unwrap();
        assert_eq!(
            out.records,
            vec![PublicationRecord::new("a1", 2005).unwrap()]
        );
    }

    #[test]
    fn csv_empty_and_header_only() {
        assert!(csv("").unwrap().records.is_empty());
        assert!(csv("author_id,year\n").unwrap().records.is_empty());
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        match csv("author_id,year\na,2000\nb\n") {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match csv("a,2000\nb,20x1\n") {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_out_of_range_years_are_rejected_not_fatal() {
        let out = csv("a,1850\nb,2001\nc,2200\n").unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.rejected.len(), 2);
        assert_eq!(out.rejected[0].line, 1);
        assert_eq!(out.rejected[1].line, 3);
    }

    const FIXTURE: &str = include_str!("../../tests/fixtures/dblp_small.xml");

    #[test]
    fn dblp_fixture_counts() {
        // 10 records: 8 single-author, 2 with two authors each.
        let out = parse_records(FIXTURE.as_bytes(), Format::DblpXml).unwrap();
        assert_eq!(out.records.len(), 12);
        assert!(out.rejected.is_empty());
        assert!(out
            .records
            .iter()
            .any(|r| r.author_id == "Jürgen Müller" && r.year == 1999));
        assert!(out
            .records
            .iter()
            .all(|r| r.author_id != "Home Page Person"));
    }

    #[test]
    fn dblp_missing_year_and_bad_year() {
        let xml = "<dblp>\n<article key=\"x\"><author>A</author></article>\n</dblp>";
        let out = parse_records(xml.as_bytes(), Format::DblpXml).unwrap();
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].line, 2);
        let xml =
            "<dblp>\n\n<article key=\"x\"><author>A</author><year>19x9</year></article>\n</dblp>";
        match parse_records(xml.as_bytes(), Format::DblpXml) {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dblp_malformed_xml_reports_line() {
        let xml = "<dblp>\n<article><author>A</author>\n<year>2000</year></book>\n</dblp>";
        match parse_records(xml.as_bytes(), Format::DblpXml) {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn entity_resolution() {
        assert_eq!(unescape("J&uuml;rgen &amp; Co"), "Jürgen & Co");
        assert_eq!(unescape("&#233;&#xE9;"), "éé");
        assert_eq!(unescape("x &unknown; y & z"), "x &unknown; y & z");
    }

    proptest! {
        #[test]
        fn csv_roundtrip(items in prop::collection::vec(("[a-zA-Z0-9 ,.\"'-]{1,12}", 1900i32..=2100), 0..40)) {
            let records: Vec<PublicationRecord> = items
                .iter()
                .filter_map(|(a, y)| PublicationRecord::new(a, *y).ok())
                .collect();
            let mut buf = Vec::new();
            write_records_csv(&records, &mut buf).unwrap();
            let back = parse_records(buf.as_slice(), Format::Csv).unwrap();
            prop_assert_eq!(back.records, records);
        }
    }
}
