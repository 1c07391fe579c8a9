//! National ILI incidence series and influenza-season windows.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::OutputMeta;
use crate::week::{weeks_in_year, IsoWeek};

/// First and last ISO week of a season window.
pub const SEASON_START_WEEK: u32 = 42;
pub const SEASON_END_WEEK: u32 = 15;

/// Weekly ILI incidence per 100,000 for one country.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IncidenceSeries {
    pub country: String,
    pub points: BTreeMap<IsoWeek, f64>,
}

impl IncidenceSeries {
    pub fn new(country: impl Into<String>) -> Self {
        Self {
            country: country.into(),
            points: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, week: IsoWeek, value: f64) -> Result<()> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::InvalidIncidence { week, value });
        }
        if self.points.insert(week, value).is_some() {
            return Err(Error::DuplicateWeek(week));
        }
        Ok(())
    }

    pub fn get(&self, week: IsoWeek) -> Option<f64> {
        self.points.get(&week).copied()
    }
}

/// Load the canonical `country,iso_year,iso_week,incidence` CSV (one country
/// per file, `#` comments allowed).
pub fn load_incidence_csv(path: impl AsRef<Path>) -> Result<IncidenceSeries> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["country", "iso_year", "iso_week", "incidence"] {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected header country,iso_year,iso_week,incidence".into(),
        });
    }
    let mut series: Option<IncidenceSeries> = None;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: m,
        };
        if rec.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", rec.len())));
        }
        let year: i32 = rec[1].trim().parse().map_err(|_| bad(format!("bad iso_year {:?}", &rec[1])))?;
        let week: u32 = rec[2].trim().parse().map_err(|_| bad(format!("bad iso_week {:?}", &rec[2])))?;
        let week = IsoWeek::new(year, week).map_err(|e| bad(e.to_string()))?;
        let value: f64 = rec[3].trim().parse().map_err(|_| bad(format!("bad incidence {:?}", &rec[3])))?;
        let s = series.get_or_insert_with(|| IncidenceSeries::new(rec[0].trim()));
        if s.country != rec[0].trim() {
            return Err(bad(format!("mixed countries {:?} and {:?}", s.country, &rec[0])));
        }
        s.insert(week, value).map_err(|e| bad(e.to_string()))?;
    }
    series.ok_or_else(|| Error::Data(format!("{}: no incidence rows", path.display())))
}

pub fn write_incidence_csv(path: impl AsRef<Path>, s: &IncidenceSeries, meta: Option<&OutputMeta>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    if let Some(meta) = meta {
        writeln!(w, "{}", meta.comment()).map_err(|e| Error::io(path, e))?;
    }
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["country", "iso_year", "iso_week", "incidence"])?;
    for (wk, v) in &s.points {
        csv.write_record([s.country.clone(), wk.year.to_string(), wk.week.to_string(), v.to_string()])?;
    }
    csv.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// How a week 53 inside a season window is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Week53Policy {
    /// Keep it; the season then spans 27 weeks and is flagged as extended.
    #[default]
    Include,
    /// Skip it so every season has exactly 26 weeks.
    Drop,
}

/// Weeks 42 of year `Y` through 15 of `Y + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonWindow {
    pub label: String,
    pub start_year: i32,
    pub weeks: Vec<IsoWeek>,
}

impl SeasonWindow {
    pub fn new(start_year: i32, policy: Week53Policy) -> Self {
        let first = IsoWeek { year: start_year, week: SEASON_START_WEEK };
        let last = IsoWeek { year: start_year + 1, week: SEASON_END_WEEK };
        let weeks = first
            .range_inclusive(last)
            .into_iter()
            .filter(|w| !(policy == Week53Policy::Drop && w.week == 53))
            .collect();
        Self {
            label: format!("{}-{}", start_year, start_year + 1),
            start_year,
            weeks,
        }
    }

    /// Parse `YYYY-YYYY` where the second year follows the first.
    pub fn from_label(label: &str, policy: Week53Policy) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("season label {label:?} is not of the form YYYY-YYYY"));
        let (a, b) = label.trim().split_once('-').ok_or_else(bad)?;
        let (a, b): (i32, i32) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
        if b != a + 1 {
            return Err(bad());
        }
        Ok(Self::new(a, policy))
    }

    /// 27 weeks because the starting year has an ISO week 53.
    pub fn is_extended(&self) -> bool {
        self.weeks.len() > 26
    }

    pub fn has_week_53(&self) -> bool {
        weeks_in_year(self.start_year) == 53
    }

    pub fn contains(&self, w: IsoWeek) -> bool {
        self.weeks.binary_search(&w).is_ok()
    }
}

impl fmt::Display for SeasonWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

impl FromStr for SeasonWindow {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SeasonWindow::from_label(s, Week53Policy::default())
    }
}

/// Every season fully covered by the series, in chronological order.
pub fn covered_seasons(inc: &IncidenceSeries, policy: Week53Policy) -> Vec<SeasonWindow> {
    let (Some(first), Some(last)) = (inc.points.keys().next(), inc.points.keys().next_back()) else {
        return Vec::new();
    };
    (first.year - 1..=last.year)
        .map(|y| SeasonWindow::new(y, policy))
        .filter(|s| s.weeks.iter().all(|w| inc.points.contains_key(w)))
        .collect()
}

/// Targets and row labels for a list of seasons. Row `i` is week
/// `rows[i]` of season `season_of_row[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedTargets {
    pub seasons: Vec<SeasonWindow>,
    pub rows: Vec<IsoWeek>,
    pub season_of_row: Vec<usize>,
    pub targets: Vec<f64>,
}

impl AlignedTargets {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row indices of season `s`.
    pub fn season_rows(&self, s: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.season_of_row[i] == s).collect()
    }
}

/// Lay season weeks out as rows and fetch their incidence.
pub fn align(inc: &IncidenceSeries, seasons: &[SeasonWindow]) -> Result<AlignedTargets> {
    let mut rows = Vec::new();
    let mut season_of_row = Vec::new();
    let mut targets = Vec::new();
    for (s, season) in seasons.iter().enumerate() {
        for &w in &season.weeks {
            if rows.last().is_some_and(|&prev| prev >= w) {
                return Err(Error::InvalidArgument(format!(
                    "season {} overlaps or precedes the previous season",
                    season.label
                )));
            }
            let v = inc.get(w).ok_or(Error::MissingIncidence(w))?;
            rows.push(w);
            season_of_row.push(s);
            targets.push(v);
        }
    }
    Ok(AlignedTargets {
        seasons: seasons.to_vec(),
        rows,
        season_of_row,
        targets,
    })
}
