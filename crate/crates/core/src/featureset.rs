//! Design matrix construction: filled page series, standardized, plus a
//! one-hot encoding of the ISO week.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{SeriesSet, WeeklySeries};
use crate::linkgraph::{normalize_title, RankingResult};
use crate::meta::OutputMeta;
use crate::week::IsoWeek;

/// Length of the week one-hot block. Week 53 shares week 52's slot.
pub const WEEK_SLOTS: usize = 52;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMethod {
    Categories,
    #[serde(rename = "cyclerank")]
    CycleRank,
    #[serde(rename = "ppagerank")]
    PPageRank,
}

impl fmt::Display for FeatureMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMethod::Categories => "categories",
            FeatureMethod::CycleRank => "cyclerank",
            FeatureMethod::PPageRank => "ppagerank",
        })
    }
}

impl FromStr for FeatureMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "categories" => Ok(FeatureMethod::Categories),
            "cyclerank" => Ok(FeatureMethod::CycleRank),
            "ppagerank" | "pagerank" => Ok(FeatureMethod::PPageRank),
            _ => Err(Error::InvalidArgument(format!("unknown feature method {s:?}"))),
        }
    }
}

/// Ordered, duplicate-free list of predictor pages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureList {
    pub method: FeatureMethod,
    pub language: String,
    pub titles: Vec<String>,
}

impl FeatureList {
    pub fn new(method: FeatureMethod, language: impl Into<String>, titles: Vec<String>) -> Result<Self> {
        if titles.is_empty() {
            return Err(Error::InvalidArgument("feature list is empty".into()));
        }
        let titles: Vec<String> = titles.iter().map(|t| normalize_title(t)).collect();
        let mut seen = HashSet::new();
        if let Some(dup) = titles.iter().find(|t| !seen.insert(t.as_str())) {
            return Err(Error::InvalidArgument(format!("duplicate title {dup:?} in feature list")));
        }
        Ok(Self {
            method,
            language: language.into(),
            titles,
        })
    }

    /// Top `n` pages of a ranking.
    pub fn from_ranking(r: &RankingResult, n: usize, exclude: &HashSet<String>, language: &str) -> Result<Self> {
        let method = match r.method {
            crate::linkgraph::RankMethod::CycleRank => FeatureMethod::CycleRank,
            crate::linkgraph::RankMethod::PPageRank => FeatureMethod::PPageRank,
        };
        Self::new(method, language, r.top_n(n, exclude))
    }

    pub fn write(&self, path: impl AsRef<Path>, meta: Option<&OutputMeta>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        if let Some(meta) = meta {
            out.push_str(&meta.comment());
            out.push('\n');
        }
        out.push_str(&format!("# method={} language={}\n", self.method, self.language));
        for t in &self.titles {
            out.push_str(t);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>, method: FeatureMethod, language: &str) -> Result<Self> {
        Self::new(method, language, crate::ingest::read_title_list(path)?)
    }
}

/// Values on `axis`: zero before the first observation, otherwise the most
/// recent observed value.
pub fn forward_fill(series: &WeeklySeries, axis: &[IsoWeek]) -> Vec<f64> {
    axis.iter()
        .map(|w| series.points.range(..=*w).next_back().map_or(0.0, |(_, p)| p.count))
        .collect()
}

/// Location and scale of one column, fitted on a row subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    /// Population (1/N) standard deviation; 0 for constant columns.
    pub std: f64,
}

impl ColumnScale {
    pub fn fit(column: &[f64], fit_rows: &[usize]) -> Self {
        assert!(!fit_rows.is_empty(), "standardization needs at least one fit row");
        let n = fit_rows.len() as f64;
        let mean = fit_rows.iter().map(|&i| column[i]).sum::<f64>() / n;
        let var = fit_rows.iter().map(|&i| (column[i] - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let std = if std <= 1e-12 * mean.abs().max(1.0) { 0.0 } else { std };
        Self { mean, std }
    }

    pub fn apply(&self, x: f64) -> f64 {
        if self.std == 0.0 {
            0.0
        } else {
            (x - self.mean) / self.std
        }
    }
}

/// Standardize with statistics from `fit_rows` only.
pub fn standardize(column: &[f64], fit_rows: &[usize]) -> (Vec<f64>, ColumnScale) {
    let scale = ColumnScale::fit(column, fit_rows);
    (column.iter().map(|&x| scale.apply(x)).collect(), scale)
}

/// Which rows the standardization statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scaling {
    /// Training rows only; held-out rows reuse the training statistics.
    #[default]
    TrainOnly,
    /// All rows, held-out seasons included.
    Global,
}

/// Slot of `week` in the one-hot block.
pub fn week_slot(week: u32) -> Result<usize> {
    match week {
        1..=52 => Ok(week as usize - 1),
        53 => Ok(WEEK_SLOTS - 1),
        _ => Err(Error::InvalidArgument(format!("week {week} outside 1..=53"))),
    }
}

pub fn one_hot_week(week: u32) -> Result<[f64; WEEK_SLOTS]> {
    let mut v = [0.0; WEEK_SLOTS];
    v[week_slot(week)?] = 1.0;
    Ok(v)
}

pub fn week_column_name(slot: usize) -> String {
    format!("week_{:02}", slot + 1)
}

/// Per-title scaling parameters, persisted as `{title: {mean, std}}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Scaler {
    pub columns: BTreeMap<String, ColumnScale>,
}

impl Scaler {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Filled but unstandardized page columns on a row axis.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatures {
    pub rows: Vec<IsoWeek>,
    pub titles: Vec<String>,
    /// `columns[j][i]` = value of page `j` at row `i`.
    pub columns: Vec<Vec<f64>>,
    /// Titles without any series (filled with zeros).
    pub missing: Vec<String>,
}

impl RawFeatures {
    pub fn build(list: &FeatureList, series: &SeriesSet, rows: &[IsoWeek]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("design matrix needs at least one row".into()));
        }
        let mut missing = Vec::new();
        let columns = list
            .titles
            .iter()
            .map(|t| match series.get(t) {
                Some(s) => forward_fill(s, rows),
                None => {
                    log::warn!("no pageview series for {t:?}; using a zero column");
                    missing.push(t.clone());
                    vec![0.0; rows.len()]
                }
            })
            .collect();
        Ok(Self {
            rows: rows.to_vec(),
            titles: list.titles.clone(),
            columns,
            missing,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Standardize page columns on `fit_rows` and append the week block.
    pub fn standardize(&self, fit_rows: &[usize]) -> Result<FeatureMatrix> {
        if fit_rows.is_empty() {
            return Err(Error::InvalidArgument("standardization needs at least one fit row".into()));
        }
        if let Some(&bad) = fit_rows.iter().find(|&&i| i >= self.n_rows()) {
            return Err(Error::InvalidArgument(format!("fit row {bad} out of range")));
        }
        let n = self.n_rows();
        let p = self.titles.len();
        let mut values = Array2::zeros((n, p + WEEK_SLOTS));
        let mut scaler = Scaler::default();
        for (j, (title, col)) in self.titles.iter().zip(&self.columns).enumerate() {
            let (z, scale) = standardize(col, fit_rows);
            for (i, v) in z.into_iter().enumerate() {
                values[[i, j]] = v;
            }
            scaler.columns.insert(title.clone(), scale);
        }
        for (i, w) in self.rows.iter().enumerate() {
            values[[i, p + week_slot(w.week)?]] = 1.0;
        }
        let column_names = self
            .titles
            .iter()
            .cloned()
            .chain((0..WEEK_SLOTS).map(week_column_name))
            .collect();
        Ok(FeatureMatrix {
            rows: self.rows.clone(),
            column_names,
            n_pages: p,
            values,
            scaler,
        })
    }
}

/// Standardized page columns followed by [`WEEK_SLOTS`] week indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Vec<IsoWeek>,
    pub column_names: Vec<String>,
    pub n_pages: usize,
    pub values: Array2<f64>,
    pub scaler: Scaler,
}

impl FeatureMatrix {
    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, meta: Option<&OutputMeta>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        if let Some(meta) = meta {
            writeln!(w, "{}", meta.comment()).map_err(io)?;
        }
        writeln!(w, "# standardization=population-std").map_err(io)?;
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["iso_year".to_string(), "iso_week".to_string()];
        header.extend(self.column_names.iter().cloned());
        csv.write_record(&header)?;
        for (i, wk) in self.rows.iter().enumerate() {
            let mut rec = vec![wk.year.to_string(), wk.week.to_string()];
            rec.extend(self.values.row(i).iter().map(|v| v.to_string()));
            csv.write_record(&rec)?;
        }
        csv.flush().map_err(io)?;
        Ok(())
    }
}

/// Build the design matrix in one step.
pub fn build_matrix(
    list: &FeatureList,
    series: &SeriesSet,
    rows: &[IsoWeek],
    fit_rows: &[usize],
) -> Result<(FeatureMatrix, Vec<String>)> {
    let raw = RawFeatures::build(list, series, rows)?;
    let m = raw.standardize(fit_rows)?;
    Ok((m, raw.missing))
}
