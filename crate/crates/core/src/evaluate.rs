//! Nowcast scoring (correlation, peak timing) and feature-set analysis.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featureset::RawFeatures;
use crate::linkgraph::{DistanceClass, LinkGraph};
use crate::meta::OutputMeta;
use crate::regress::TrainedModel;
use crate::week::IsoWeek;

/// Pearson correlation. Undefined when either input is constant; that
/// case reports `r = 0` with `constant_input` set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub constant_input: bool,
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<Correlation> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least 2 points".into()));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(Correlation { r: 0.0, constant_input: true });
    }
    let r = (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0);
    Ok(Correlation { r, constant_input: false })
}

/// Index of the first maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakResult {
    pub truth_index: usize,
    pub pred_index: usize,
    pub exact: bool,
    pub within_2: bool,
}

/// Compare the weeks of highest incidence; ties resolve to the earliest week.
pub fn peak_accuracy(truth: &[f64], pred: &[f64]) -> Result<PeakResult> {
    if truth.is_empty() || pred.is_empty() {
        return Err(Error::InvalidArgument("peak accuracy needs a non-empty season".into()));
    }
    if truth.len() != pred.len() {
        return Err(Error::InvalidArgument("truth and prediction differ in length".into()));
    }
    let t = argmax(truth);
    let p = argmax(pred);
    Ok(PeakResult {
        truth_index: t,
        pred_index: p,
        exact: t == p,
        within_2: t.abs_diff(p) <= 2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonScore {
    pub season: String,
    pub pcc: f64,
    /// Set when the correlation was undefined (constant series).
    pub pcc_undefined: bool,
    pub peak_truth_week: IsoWeek,
    pub peak_pred_week: IsoWeek,
    pub peak_exact: bool,
    pub peak_within_2: bool,
    /// Season spans 27 weeks (ISO week 53).
    pub extended: bool,
}

/// Score one held-out season. `pred` should be the clamped predictions.
pub fn score_season(season: &str, weeks: &[IsoWeek], truth: &[f64], pred: &[f64]) -> Result<SeasonScore> {
    if weeks.len() != truth.len() {
        return Err(Error::InvalidArgument("week labels and truth differ in length".into()));
    }
    let c = pearson(truth, pred)?;
    let peak = peak_accuracy(truth, pred)?;
    Ok(SeasonScore {
        season: season.to_string(),
        pcc: c.r,
        pcc_undefined: c.constant_input,
        peak_truth_week: weeks[peak.truth_index],
        peak_pred_week: weeks[peak.pred_index],
        peak_exact: peak.exact,
        peak_within_2: peak.within_2,
        extended: weeks.len() > 26,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub country: String,
    pub method: String,
    pub dataset: String,
    pub seasons: Vec<SeasonScore>,
    pub mean_pcc: f64,
    pub exact_peaks: usize,
    pub within_2_peaks: usize,
    /// `exact (within +-2)`, e.g. `1 (4)`.
    pub peaks: String,
}

pub fn peak_cell(exact: usize, within_2: usize) -> String {
    format!("{exact} ({within_2})")
}

pub fn summarize(country: &str, method: &str, dataset: &str, seasons: Vec<SeasonScore>) -> Result<EvaluationReport> {
    if seasons.is_empty() {
        return Err(Error::InvalidArgument("cannot summarize zero seasons".into()));
    }
    let mean_pcc = seasons.iter().map(|s| s.pcc).sum::<f64>() / seasons.len() as f64;
    let exact_peaks = seasons.iter().filter(|s| s.peak_exact).count();
    let within_2_peaks = seasons.iter().filter(|s| s.peak_within_2).count();
    Ok(EvaluationReport {
        country: country.to_string(),
        method: method.to_string(),
        dataset: dataset.to_string(),
        seasons,
        mean_pcc,
        exact_peaks,
        within_2_peaks,
        peaks: peak_cell(exact_peaks, within_2_peaks),
    })
}

/// Percentage of `a`'s distinct titles that also occur in `b`.
pub fn feature_overlap<A: AsRef<str>, B: AsRef<str>>(a: &[A], b: &[B]) -> Result<f64> {
    let a: HashSet<&str> = a.iter().map(AsRef::as_ref).collect();
    if a.is_empty() {
        return Err(Error::InvalidArgument("overlap of an empty feature set is undefined".into()));
    }
    let b: HashSet<&str> = b.iter().map(AsRef::as_ref).collect();
    let shared = a.iter().filter(|t| b.contains(*t)).count();
    Ok(100.0 * shared as f64 / a.len() as f64)
}

/// Pages selected by a group of per-season models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStats {
    /// Pages with a non-zero weight in at least one model.
    pub union: BTreeSet<String>,
    /// Selected page count of each model.
    pub counts: Vec<usize>,
    pub min: usize,
    pub max: usize,
    pub mean: f64,
}

impl SelectionStats {
    /// `min / max / mean`, e.g. `30 / 65 / 48.75`.
    pub fn cell(&self) -> String {
        format!("{} / {} / {:.2}", self.min, self.max, self.mean)
    }
}

/// Week indicator columns are not counted.
pub fn selected_features(models: &[TrainedModel]) -> SelectionStats {
    let mut union = BTreeSet::new();
    let mut counts = Vec::with_capacity(models.len());
    for m in models {
        let mut c = 0;
        for (name, _) in m.selected_pages() {
            union.insert(name.to_string());
            c += 1;
        }
        counts.push(c);
    }
    let min = counts.iter().copied().min().unwrap_or(0);
    let max = counts.iter().copied().max().unwrap_or(0);
    let mean = if counts.is_empty() {
        0.0
    } else {
        counts.iter().sum::<usize>() as f64 / counts.len() as f64
    };
    SelectionStats { union, counts, min, max, mean }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorEntry {
    pub title: String,
    pub mean_weight: f64,
    pub pcc: f64,
    /// `None` when the reference page is not in the graph.
    pub distance: Option<DistanceClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorReport {
    pub reference: String,
    pub entries: Vec<PredictorEntry>,
}

/// The `k` pages with the highest positive mean weight across `models`,
/// with their correlation to `incidence` and hop distance from `reference`.
/// `raw` and `incidence` must share rows.
pub fn top_k_predictors(
    models: &[TrainedModel],
    raw: &RawFeatures,
    incidence: &[f64],
    graph: Option<&LinkGraph>,
    reference: &str,
    k: usize,
) -> Result<PredictorReport> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if models.is_empty() {
        return Err(Error::InvalidArgument("no models to analyse".into()));
    }
    if raw.n_rows() != incidence.len() {
        return Err(Error::InvalidArgument("feature rows and incidence differ in length".into()));
    }
    let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
    for m in models {
        for (name, w) in m.column_names[..m.n_pages].iter().zip(&m.weights) {
            *sums.entry(name.as_str()).or_insert(0.0) += w;
        }
    }
    let mut ranked: Vec<(&str, f64)> = sums
        .into_iter()
        .map(|(t, s)| (t, s / models.len() as f64))
        .filter(|(_, w)| *w > 0.0)
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked.truncate(k);

    let dist = graph.and_then(|g| g.id(reference).map(|r| (g, g.bfs_distances(r, false, None))));
    if dist.is_none() {
        log::warn!("reference {reference:?} not in graph; distances unavailable");
    }
    let entries = ranked
        .into_iter()
        .map(|(title, mean_weight)| {
            let col = raw
                .titles
                .iter()
                .position(|t| t == title)
                .map(|j| raw.columns[j].as_slice());
            let pcc = match col {
                Some(c) => pearson(c, incidence)?.r,
                None => 0.0,
            };
            let distance = dist.as_ref().map(|(g, d)| DistanceClass::from_distance(g.id(title).and_then(|v| d[v as usize])));
            Ok(PredictorEntry {
                title: title.to_string(),
                mean_weight,
                pcc,
                distance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictorReport {
        reference: reference.to_string(),
        entries,
    })
}

/// Pretty JSON with a `meta` block alongside the payload.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, payload: &T, meta: Option<&OutputMeta>) -> Result<()> {
    #[derive(Serialize)]
    struct Wrapped<'a, T> {
        #[serde(skip_serializing_if = "Option::is_none")]
        meta: Option<&'a OutputMeta>,
        #[serde(flatten)]
        payload: &'a T,
    }
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&Wrapped { meta, payload })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_season_csv(path: impl AsRef<Path>, r: &EvaluationReport, meta: Option<&OutputMeta>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    if let Some(meta) = meta {
        writeln!(w, "{}", meta.comment()).map_err(|e| Error::io(path, e))?;
    }
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record([
        "country", "method", "dataset", "season", "pcc", "peak_truth_week", "peak_pred_week", "peak_exact",
        "peak_within_2", "extended",
    ])?;
    for s in &r.seasons {
        csv.write_record([
            r.country.clone(),
            r.method.clone(),
            r.dataset.clone(),
            s.season.clone(),
            format!("{:.6}", s.pcc),
            s.peak_truth_week.to_string(),
            s.peak_pred_week.to_string(),
            s.peak_exact.to_string(),
            s.peak_within_2.to_string(),
            s.extended.to_string(),
        ])?;
    }
    csv.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_predictor_csv(path: impl AsRef<Path>, r: &PredictorReport, meta: Option<&OutputMeta>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    if let Some(meta) = meta {
        writeln!(w, "{}", meta.comment()).map_err(|e| Error::io(path, e))?;
    }
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["rank", "title", "mean_weight", "pcc", "d_i", "d_i_hops"])?;
    for (i, e) in r.entries.iter().enumerate() {
        let (label, hops) = match &e.distance {
            Some(d) => (d.table_label(), d.hops().map(|h| h.to_string()).unwrap_or_else(|| "unreachable".into())),
            None => ("n/a".to_string(), String::new()),
        };
        csv.write_record([
            (i + 1).to_string(),
            e.title.clone(),
            format!("{:.6e}", e.mean_weight),
            format!("{:.3}", e.pcc),
            label,
            hops,
        ])?;
    }
    csv.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
