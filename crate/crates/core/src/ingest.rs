//! Hourly pageview dumps to weekly per-page series.
//!
//! Both dump generations (`pagecounts` and `pageviews`) carry four
//! space-separated columns: project, title, requests, bytes. Files are
//! named with a `YYYYMMDD-HHMMSS` UTC stamp, optionally gzip-compressed.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use flate2::read::MultiGzDecoder;
use percent_encoding::percent_decode_str;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linkgraph::{normalize_title, LoadMode};
use crate::meta::OutputMeta;
use crate::week::IsoWeek;

/// Which dump generation a record (or weekly point) came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Pagecounts,
    Pageviews,
}

/// Dump dialects share the line format; they differ in project codes.
pub type Dialect = Provenance;

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Pagecounts => "pagecounts",
            Provenance::Pageviews => "pageviews",
        })
    }
}

impl std::str::FromStr for Provenance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pagecounts" | "pc" => Ok(Provenance::Pagecounts),
            "pageviews" | "pv" => Ok(Provenance::Pageviews),
            _ => Err(Error::InvalidArgument(format!("unknown dump dialect {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpRecord {
    pub project: String,
    pub title: String,
    pub requests: u64,
    pub bytes: u64,
}

/// Why a dump line was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LineError {
    FieldCount(usize),
    BadNumber(String),
    EmptyTitle,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LineError::FieldCount(n) => write!(f, "expected 4 fields, found {n}"),
            LineError::BadNumber(s) => write!(f, "non-numeric count {s:?}"),
            LineError::EmptyTitle => f.write_str("empty title"),
        }
    }
}

/// Parse one dump line. The title is percent-decoded (left as-is when the
/// escapes do not decode to UTF-8) and spaces become underscores.
pub fn parse_dump_line(line: &str, _dialect: Dialect) -> std::result::Result<DumpRecord, LineError> {
    let fields: Vec<&str> = line.split(' ').collect();
    if fields.len() != 4 {
        return Err(LineError::FieldCount(fields.len()));
    }
    let number = |s: &str| s.parse::<u64>().map_err(|_| LineError::BadNumber(s.to_string()));
    let requests = number(fields[2])?;
    let bytes = number(fields[3])?;
    let raw = fields[1];
    if raw.is_empty() {
        return Err(LineError::EmptyTitle);
    }
    let title = match percent_decode_str(raw).decode_utf8() {
        Ok(t) => normalize_title(&t),
        Err(_) => normalize_title(raw),
    };
    Ok(DumpRecord {
        project: fields[0].to_string(),
        title,
        requests,
        bytes,
    })
}

/// Selects records of one Wikipedia edition and, optionally, a page list.
#[derive(Debug, Clone)]
pub struct RecordFilter {
    pub project: String,
    pub pages: Option<HashSet<String>>,
}

impl RecordFilter {
    pub fn new(project: impl Into<String>) -> Self {
        Self {
            project: project.into(),
            pages: None,
        }
    }

    pub fn with_pages<I: IntoIterator<Item = S>, S: AsRef<str>>(mut self, pages: I) -> Self {
        self.pages = Some(pages.into_iter().map(|p| normalize_title(p.as_ref())).collect());
        self
    }

    /// `pageviews` splits an edition into desktop (`it`) and mobile (`it.m`)
    /// rows; both count. `pagecounts` has no mobile traffic.
    pub fn accepts(&self, rec: &DumpRecord, dialect: Dialect) -> bool {
        let project_ok = rec.project == self.project
            || (dialect == Provenance::Pageviews
                && rec.project.strip_suffix(".m") == Some(self.project.as_str()));
        project_ok && self.pages.as_ref().is_none_or(|p| p.contains(&rec.title))
    }
}

/// UTC timestamp from a dump file name such as `pagecounts-20160101-130000.gz`.
pub fn timestamp_from_filename(name: &str) -> Result<NaiveDateTime> {
    let bytes = name.as_bytes();
    for start in 0..bytes.len().saturating_sub(14) {
        let window = &bytes[start..start + 15];
        let digits = |r: std::ops::Range<usize>| window[r].iter().all(u8::is_ascii_digit);
        if window[8] != b'-' || !digits(0..8) || !digits(9..15) {
            continue;
        }
        let text = &name[start..start + 15];
        let num = |r: std::ops::Range<usize>| text[r].parse::<u32>().unwrap();
        let date = NaiveDate::from_ymd_opt(num(0..4) as i32, num(4..6), num(6..8));
        let time = NaiveTime::from_hms_opt(num(9..11), num(11..13), num(13..15));
        if let (Some(d), Some(t)) = (date, time) {
            return Ok(NaiveDateTime::new(d, t));
        }
    }
    Err(Error::MissingTimestamp(name.to_string()))
}

/// One observed week of a page.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeekPoint {
    pub count: f64,
    pub provenance: Provenance,
}

/// Weekly view counts of one page. Weeks without data are absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WeeklySeries {
    pub page: String,
    pub points: BTreeMap<IsoWeek, WeekPoint>,
}

impl WeeklySeries {
    pub fn new(page: impl Into<String>) -> Self {
        Self {
            page: page.into(),
            points: BTreeMap::new(),
        }
    }

    pub fn total(&self) -> f64 {
        self.points.values().map(|p| p.count).sum()
    }
}

/// Series keyed by page title.
pub type SeriesSet = BTreeMap<String, WeeklySeries>;

/// Integer weekly sums; merging two accumulators is exact and order-free.
#[derive(Debug, Clone, Default)]
pub struct WeeklyAggregator {
    counts: BTreeMap<String, BTreeMap<IsoWeek, u64>>,
}

impl WeeklyAggregator {
    pub fn add(&mut self, timestamp: NaiveDateTime, rec: &DumpRecord) {
        let week = IsoWeek::from_date(timestamp.date());
        *self
            .counts
            .entry(rec.title.clone())
            .or_default()
            .entry(week)
            .or_insert(0) += rec.requests;
    }

    pub fn merge(&mut self, other: WeeklyAggregator) {
        for (page, weeks) in other.counts {
            let mine = self.counts.entry(page).or_default();
            for (w, c) in weeks {
                *mine.entry(w).or_insert(0) += c;
            }
        }
    }

    pub fn finish(self, provenance: Provenance) -> SeriesSet {
        self.counts
            .into_iter()
            .map(|(page, weeks)| {
                let points = weeks
                    .into_iter()
                    .map(|(w, c)| (w, WeekPoint { count: c as f64, provenance }))
                    .collect();
                (page.clone(), WeeklySeries { page, points })
            })
            .collect()
    }
}

/// Sum already-filtered hourly records into ISO weeks.
pub fn aggregate_weekly<'a, I>(records: I, provenance: Provenance) -> SeriesSet
where
    I: IntoIterator<Item = (NaiveDateTime, &'a DumpRecord)>,
{
    let mut agg = WeeklyAggregator::default();
    for (ts, rec) in records {
        agg.add(ts, rec);
    }
    agg.finish(provenance)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub files: u64,
    pub lines: u64,
    pub accepted: u64,
    pub filtered: u64,
    pub malformed: u64,
    /// Sum of `requests` over accepted records.
    pub accepted_requests: u64,
    /// `(file, line)` of the first malformed lines, capped at 100.
    pub malformed_positions: Vec<(String, u64)>,
}

impl IngestStats {
    fn merge(&mut self, other: IngestStats) {
        self.files += other.files;
        self.lines += other.lines;
        self.accepted += other.accepted;
        self.filtered += other.filtered;
        self.malformed += other.malformed;
        self.accepted_requests += other.accepted_requests;
        self.malformed_positions.extend(other.malformed_positions);
        self.malformed_positions.sort();
        self.malformed_positions.truncate(100);
    }
}

fn open_dump(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic).map_err(|e| Error::io(path, e))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

fn ingest_one(
    path: &Path,
    dialect: Dialect,
    filter: &RecordFilter,
    mode: LoadMode,
) -> Result<(WeeklyAggregator, IngestStats)> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ts = timestamp_from_filename(&name)?;
    let mut reader = open_dump(path)?;
    let mut agg = WeeklyAggregator::default();
    let mut stats = IngestStats {
        files: 1,
        ..Default::default()
    };
    let mut buf = Vec::new();
    let mut lineno = 0u64;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        lineno += 1;
        let text = String::from_utf8_lossy(&buf);
        let line = text.trim_end_matches(['\n', '\r']);
        if line.is_empty() {
            continue;
        }
        stats.lines += 1;
        match parse_dump_line(line, dialect) {
            Ok(rec) if filter.accepts(&rec, dialect) => {
                stats.accepted += 1;
                stats.accepted_requests += rec.requests;
                agg.add(ts, &rec);
            }
            Ok(_) => stats.filtered += 1,
            Err(e) => {
                if mode == LoadMode::Strict {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno,
                        message: e.to_string(),
                    });
                }
                stats.malformed += 1;
                if stats.malformed_positions.len() < 100 {
                    stats.malformed_positions.push((name.clone(), lineno));
                }
            }
        }
    }
    Ok((agg, stats))
}

/// Ingest dump files in parallel. The result does not depend on file order
/// or thread schedule.
pub fn ingest_files(
    paths: &[PathBuf],
    dialect: Dialect,
    filter: &RecordFilter,
    mode: LoadMode,
) -> Result<(SeriesSet, IngestStats)> {
    let (agg, stats) = paths
        .par_iter()
        .map(|p| ingest_one(p, dialect, filter, mode))
        .try_reduce(
            || (WeeklyAggregator::default(), IngestStats::default()),
            |(mut a, mut s), (b, t)| {
                a.merge(b);
                s.merge(t);
                Ok((a, s))
            },
        )?;
    Ok((agg.finish(dialect), stats))
}

/// Join the two dump generations: weeks before `cutover` come from
/// `pagecounts`, weeks at or after it from `pageviews`.
pub fn merge_datasets(pc: &SeriesSet, pv: &SeriesSet, cutover: IsoWeek) -> SeriesSet {
    let mut out = SeriesSet::new();
    for (page, s) in pc {
        let entry = out.entry(page.clone()).or_insert_with(|| WeeklySeries::new(page.clone()));
        entry.points.extend(s.points.range(..cutover).map(|(w, p)| (*w, *p)));
    }
    for (page, s) in pv {
        let entry = out.entry(page.clone()).or_insert_with(|| WeeklySeries::new(page.clone()));
        entry.points.extend(s.points.range(cutover..).map(|(w, p)| (*w, *p)));
    }
    out
}

/// Default start of the `pageviews` era: September 2016.
pub fn default_cutover() -> IsoWeek {
    IsoWeek { year: 2016, week: 36 }
}

/// Write `page,iso_year,iso_week,count,provenance`.
pub fn write_weekly_csv(path: impl AsRef<Path>, set: &SeriesSet, meta: Option<&OutputMeta>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    if let Some(meta) = meta {
        writeln!(w, "{}", meta.comment()).map_err(|e| Error::io(path, e))?;
    }
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["page", "iso_year", "iso_week", "count", "provenance"])?;
    for s in set.values() {
        for (wk, p) in &s.points {
            csv.write_record([
                s.page.clone(),
                wk.year.to_string(),
                wk.week.to_string(),
                p.count.to_string(),
                p.provenance.to_string(),
            ])?;
        }
    }
    csv.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_weekly_csv(path: impl AsRef<Path>) -> Result<SeriesSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["page", "iso_year", "iso_week", "count", "provenance"] {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected header page,iso_year,iso_week,count,provenance".into(),
        });
    }
    let mut out = SeriesSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |m: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: m.to_string(),
        };
        let page = normalize_title(&rec[0]);
        let year: i32 = rec[1].parse().map_err(|_| bad("bad iso_year"))?;
        let week: u32 = rec[2].parse().map_err(|_| bad("bad iso_week"))?;
        let week = IsoWeek::new(year, week).map_err(|_| bad("week out of range"))?;
        let count: f64 = rec[3].parse().map_err(|_| bad("bad count"))?;
        if !(count.is_finite() && count >= 0.0) {
            return Err(bad("count must be finite and non-negative"));
        }
        let provenance: Provenance = rec[4].parse().map_err(|_| bad("bad provenance"))?;
        let s = out.entry(page.clone()).or_insert_with(|| WeeklySeries::new(page));
        if s.points.insert(week, WeekPoint { count, provenance }).is_some() {
            return Err(bad("duplicate page/week row"));
        }
    }
    Ok(out)
}

/// Read a page list: one title per line, `#` comments allowed.
pub fn read_title_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(normalize_title)
        .filter(|t| seen.insert(t.clone()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(y: i32, m: u32, d: u32, h: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, m, d).unwrap().and_hms_opt(h, 0, 0).unwrap()
    }

    fn rec(title: &str, n: u64) -> DumpRecord {
        DumpRecord {
            project: "it".into(),
            title: title.into(),
            requests: n,
            bytes: 0,
        }
    }

    #[test]
    fn parses_documented_line() {
        let r = parse_dump_line("it Influenza 42 93747", Provenance::Pagecounts).unwrap();
        assert_eq!(r, DumpRecord { project: "it".into(), title: "Influenza".into(), requests: 42, bytes: 93747 });
    }

    #[test]
    fn malformed_lines() {
        assert_eq!(
            parse_dump_line("it Influenza x 93747", Provenance::Pagecounts),
            Err(LineError::BadNumber("x".into()))
        );
        assert_eq!(parse_dump_line("it Influenza 3", Provenance::Pageviews), Err(LineError::FieldCount(3)));
        assert_eq!(parse_dump_line("it  3 4", Provenance::Pageviews), Err(LineError::EmptyTitle));
    }

    #[test]
    fn percent_decoding() {
        let r = parse_dump_line("it Influenza%20aviaria 1 1", Provenance::Pagecounts).unwrap();
        assert_eq!(r.title, "Influenza_aviaria");
        let r = parse_dump_line("de Gr%C3%BCnkohl 1 1", Provenance::Pagecounts).unwrap();
        assert_eq!(r.title, "Grünkohl");
        let r = parse_dump_line("de Bad%FF 1 1", Provenance::Pagecounts).unwrap();
        assert_eq!(r.title, "Bad%FF");
    }

    #[test]
    fn project_filter() {
        let f = RecordFilter::new("it");
        let de = parse_dump_line("de Fieber 7 100", Provenance::Pagecounts).unwrap();
        assert!(!f.accepts(&de, Provenance::Pagecounts));
        let mobile = parse_dump_line("it.m Febbre 7 0", Provenance::Pageviews).unwrap();
        assert!(f.accepts(&mobile, Provenance::Pageviews));
        assert!(!f.accepts(&mobile, Provenance::Pagecounts));
        let f = f.with_pages(["Influenza"]);
        assert!(!f.accepts(&mobile, Provenance::Pageviews));
    }

    #[test]
    fn timestamps() {
        assert_eq!(timestamp_from_filename("pagecounts-20160101-130000.gz").unwrap(), ts(2016, 1, 1, 13));
        assert_eq!(timestamp_from_filename("pageviews-20161001-000000").unwrap(), ts(2016, 10, 1, 0));
        assert!(matches!(timestamp_from_filename("dump.gz"), Err(Error::MissingTimestamp(_))));
        assert!(timestamp_from_filename("pagecounts-20161301-000000").is_err());
    }

    #[test]
    fn sums_a_day_of_hours() {
        let r = rec("Influenza", 1);
        let hours: Vec<_> = (0..24).map(|h| (ts(2016, 3, 9, h), &r)).collect();
        let set = aggregate_weekly(hours, Provenance::Pagecounts);
        let s = &set["Influenza"];
        assert_eq!(s.points.len(), 1);
        assert_eq!(s.points[&IsoWeek { year: 2016, week: 10 }].count, 24.0);
    }

    #[test]
    fn sunday_monday_boundary_splits() {
        let r = rec("Influenza", 1);
        // 2016-03-13 is a Sunday (week 10), 2016-03-14 a Monday (week 11).
        let set = aggregate_weekly([(ts(2016, 3, 13, 23), &r), (ts(2016, 3, 14, 0), &r)], Provenance::Pageviews);
        let weeks: Vec<_> = set["Influenza"].points.keys().map(|w| w.week).collect();
        assert_eq!(weeks, vec![10, 11]);
    }

    #[test]
    fn empty_stream() {
        assert!(aggregate_weekly(std::iter::empty(), Provenance::Pageviews).is_empty());
    }

    fn series(page: &str, pts: &[((i32, u32), f64)], prov: Provenance) -> SeriesSet {
        let mut s = WeeklySeries::new(page);
        for &((y, w), c) in pts {
            s.points.insert(IsoWeek { year: y, week: w }, WeekPoint { count: c, provenance: prov });
        }
        SeriesSet::from([(page.to_string(), s)])
    }

    #[test]
    fn merge_disjoint_ranges() {
        let pc = series("A", &[((2016, 1), 10.0)], Provenance::Pagecounts);
        let pv = series("A", &[((2016, 40), 20.0)], Provenance::Pageviews);
        let m = merge_datasets(&pc, &pv, default_cutover());
        let p = &m["A"].points;
        assert_eq!(p[&IsoWeek { year: 2016, week: 1 }], WeekPoint { count: 10.0, provenance: Provenance::Pagecounts });
        assert_eq!(p[&IsoWeek { year: 2016, week: 40 }], WeekPoint { count: 20.0, provenance: Provenance::Pageviews });
    }

    #[test]
    fn merge_pageviews_win_after_cutover() {
        let pc = series("A", &[((2016, 40), 5.0), ((2016, 35), 1.0)], Provenance::Pagecounts);
        let pv = series("A", &[((2016, 40), 20.0), ((2016, 35), 9.0)], Provenance::Pageviews);
        let m = merge_datasets(&pc, &pv, default_cutover());
        let p = &m["A"].points;
        assert_eq!(p[&IsoWeek { year: 2016, week: 40 }].count, 20.0);
        assert_eq!(p[&IsoWeek { year: 2016, week: 35 }].count, 1.0);
    }

    #[test]
    fn merge_without_pageviews_truncates() {
        let pc = series("A", &[((2016, 30), 5.0), ((2016, 40), 6.0)], Provenance::Pagecounts);
        let m = merge_datasets(&pc, &SeriesSet::new(), default_cutover());
        assert_eq!(m["A"].points.len(), 1);
        // idempotent
        assert_eq!(merge_datasets(&m, &m, default_cutover()), m);
    }

    #[test]
    fn weekly_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        let set = series("Swine_flu", &[((2016, 1), 10.0), ((2016, 2), 3.5)], Provenance::Pagecounts);
        write_weekly_csv(&path, &set, Some(&OutputMeta::new("h"))).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("Swine_flu,2016,1,10,pagecounts"));
        assert_eq!(read_weekly_csv(&path).unwrap(), set);
    }

    #[test]
    fn strict_ingest_aborts_with_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pagecounts-20160101-000000");
        std::fs::write(&path, "it A 1 1\nit B x 1\n").unwrap();
        let err = ingest_files(&[path.clone()], Provenance::Pagecounts, &RecordFilter::new("it"), LoadMode::Strict)
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let (set, stats) =
            ingest_files(&[path], Provenance::Pagecounts, &RecordFilter::new("it"), LoadMode::Lenient).unwrap();
        assert_eq!(stats.malformed, 1);
        assert_eq!(stats.malformed_positions, vec![("pagecounts-20160101-000000".to_string(), 2)]);
        assert_eq!(set["A"].total(), 1.0);
    }
}
