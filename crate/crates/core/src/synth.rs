//! Synthetic incidence and page-view datasets with a planted linear model.
//!
//! Incidence is a baseline plus one Gaussian bump per season. Signal pages
//! are scaled copies of incidence with Gaussian noise; decoys are AR(1)
//! noise around a page-specific level, some with an annual cycle. Media
//! spikes multiply single season weeks of any page.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::healthdata::{write_incidence_csv, IncidenceSeries, SeasonWindow, Week53Policy};
use crate::ingest::{write_weekly_csv, Provenance, SeriesSet, WeekPoint, WeeklySeries};
use crate::meta::OutputMeta;
use crate::week::IsoWeek;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthScenario {
    pub seasons: usize,
    /// Total pages, signal pages included.
    pub pages: usize,
    pub signal_pages: usize,
    /// One positive weight per signal page; drawn from [0.5, 2] when absent.
    pub true_weights: Option<Vec<f64>>,
    /// Noise standard deviation as a fraction of each signal page's own
    /// standard deviation.
    pub noise_std: f64,
    /// Probability of a spike, per page and season week.
    pub spike_rate: f64,
    pub seed: u64,
    /// Start year of the first season.
    pub first_season: i32,
    pub country: String,
    /// Title of the reference page, which is always a signal page.
    pub reference: String,
    /// Pagecounts data ends a few weeks after this week and pageviews data
    /// starts a year before it.
    pub cutover: IsoWeek,
    /// Constant extra traffic in pagecounts, as a fraction of the page mean.
    pub bot_fraction: f64,
}

impl Default for SynthScenario {
    fn default() -> Self {
        Self {
            seasons: 6,
            pages: 200,
            signal_pages: 10,
            true_weights: None,
            noise_std: 0.1,
            spike_rate: 0.02,
            seed: 42,
            first_season: 2014,
            country: "XX".into(),
            reference: "Influenza".into(),
            cutover: crate::ingest::default_cutover(),
            bot_fraction: 0.02,
        }
    }
}

impl SynthScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.seasons == 0 || self.pages == 0 || self.signal_pages == 0 {
            return bad("seasons, pages and signal_pages must be >= 1");
        }
        if self.signal_pages > self.pages {
            return bad("signal_pages must not exceed pages");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be a finite value >= 0");
        }
        if !(0.0..=1.0).contains(&self.spike_rate) {
            return bad("spike_rate must lie in [0, 1]");
        }
        if !(self.bot_fraction >= 0.0) {
            return bad("bot_fraction must be >= 0");
        }
        if let Some(w) = &self.true_weights {
            if w.len() != self.signal_pages {
                return bad("true_weights needs one entry per signal page");
            }
            if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return bad("true_weights must be positive");
            }
        }
        if self.reference.trim().is_empty() {
            return bad("reference title must not be empty");
        }
        Ok(())
    }

    pub fn season_windows(&self) -> Vec<SeasonWindow> {
        (0..self.seasons)
            .map(|s| SeasonWindow::new(self.first_season + s as i32, Week53Policy::Include))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonPeak {
    pub season: String,
    pub week: IsoWeek,
    pub amplitude: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenario: SynthScenario,
    pub weights: BTreeMap<String, f64>,
    pub peaks: Vec<SeasonPeak>,
    pub spikes: usize,
    /// Season weeks eligible for spikes, summed over pages.
    pub spike_opportunities: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    /// Clean series over the whole timeline (the pageviews view of it).
    pub series: SeriesSet,
    pub pageviews: SeriesSet,
    pub pagecounts: SeriesSet,
    pub incidence: IncidenceSeries,
    pub edges: Vec<(String, String)>,
    pub categories: Vec<String>,
    pub truth: GroundTruth,
}

/// Paths written by [`SynthData::write`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPaths {
    pub pagecounts: PathBuf,
    pub pageviews: PathBuf,
    pub incidence: PathBuf,
    pub graph: PathBuf,
    pub categories: PathBuf,
    pub truth: PathBuf,
}

pub fn generate(s: &SynthScenario) -> Result<SynthData> {
    s.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");

    let windows = s.season_windows();
    let first = IsoWeek::new(s.first_season, 1)?;
    let last = IsoWeek::new(s.first_season + s.seasons as i32, 26)?;
    let timeline = first.range_inclusive(last);
    let index_of: BTreeMap<IsoWeek, usize> = timeline.iter().enumerate().map(|(i, w)| (*w, i)).collect();

    // Incidence.
    let mut peaks = Vec::with_capacity(windows.len());
    let mut incidence = vec![2.0; timeline.len()];
    for win in &windows {
        let candidates: Vec<IsoWeek> = win.weeks.iter().copied().filter(|w| w.week >= 49 || w.week <= 8).collect();
        let week = candidates[rng.random_range(0..candidates.len())];
        let amplitude = rng.random_range(100.0..400.0);
        let width = rng.random_range(2.0..3.5);
        let centre = index_of[&week] as f64;
        for (t, v) in incidence.iter_mut().enumerate() {
            let z = (t as f64 - centre) / width;
            *v += amplitude * (-0.5 * z * z).exp();
        }
        peaks.push(SeasonPeak {
            season: win.label.clone(),
            week,
            amplitude,
            width,
        });
    }
    let inc_std = population_std(&incidence);

    // Titles; the reference is signal page 0, the other signal pages are a
    // random subset of the rest.
    let others: Vec<String> = (1..s.pages).map(|i| format!("Page_{i:03}")).collect();
    let mut pool: Vec<usize> = (0..others.len()).collect();
    pool.shuffle(&mut rng);
    let signal_set: BTreeSet<usize> = pool[..s.signal_pages - 1].iter().copied().collect();
    let mut titles = vec![s.reference.clone()];
    titles.extend(signal_set.iter().map(|&i| others[i].clone()));
    let n_signal = titles.len();
    titles.extend(others.iter().enumerate().filter(|(i, _)| !signal_set.contains(i)).map(|(_, t)| t.clone()));

    let weights: Vec<f64> = match &s.true_weights {
        Some(w) => w.clone(),
        None => (0..s.signal_pages).map(|_| rng.random_range(0.5..2.0)).collect(),
    };

    let mut values: Vec<Vec<f64>> = Vec::with_capacity(s.pages);
    for (p, _) in titles.iter().enumerate() {
        let v: Vec<f64> = if p < n_signal {
            let w = weights[p];
            let sd = s.noise_std * w * inc_std;
            incidence.iter().map(|&i| w * i + sd * std_normal.sample(&mut rng)).collect()
        } else {
            let level = rng.random_range(20f64.ln()..2000f64.ln()).exp();
            let phi = 0.9;
            let innovation = 0.15 * level * (1.0 - phi * phi as f64).sqrt();
            let annual = if rng.random_bool(0.5) { rng.random_range(0.0..0.3) * level } else { 0.0 };
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let mut x = 0.15 * level * std_normal.sample(&mut rng);
            timeline
                .iter()
                .enumerate()
                .map(|(t, _)| {
                    if t > 0 {
                        x = phi * x + innovation * std_normal.sample(&mut rng);
                    }
                    level + x + annual * (std::f64::consts::TAU * t as f64 / 52.18 + phase).sin()
                })
                .collect()
        };
        values.push(v);
    }

    // Spikes on season weeks.
    let season_idx: Vec<usize> = windows.iter().flat_map(|w| w.weeks.iter().map(|wk| index_of[wk])).collect();
    let mut spikes = 0;
    for v in values.iter_mut() {
        for &t in &season_idx {
            if rng.random_bool(s.spike_rate) {
                v[t] *= rng.random_range(2.0..4.0);
                spikes += 1;
            }
        }
    }
    for v in values.iter_mut() {
        for x in v.iter_mut() {
            *x = x.max(0.0);
        }
    }

    // Series and the two dump generations.
    let pv_start = nth_before(s.cutover, 52);
    let pc_end = nth_after(s.cutover, 12);
    let mut series = SeriesSet::new();
    let mut pageviews = SeriesSet::new();
    let mut pagecounts = SeriesSet::new();
    for (title, v) in titles.iter().zip(&values) {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let bot = s.bot_fraction * mean;
        let mut all = WeeklySeries::new(title.clone());
        let mut pv = WeeklySeries::new(title.clone());
        let mut pc = WeeklySeries::new(title.clone());
        for (w, &x) in timeline.iter().zip(v) {
            let point = |count, provenance| WeekPoint { count, provenance };
            all.points.insert(*w, point(x, Provenance::Pageviews));
            if *w >= pv_start {
                pv.points.insert(*w, point(x, Provenance::Pageviews));
            }
            if *w <= pc_end {
                pc.points.insert(*w, point(x + bot, Provenance::Pagecounts));
            }
        }
        series.insert(title.clone(), all);
        if !pv.points.is_empty() {
            pageviews.insert(title.clone(), pv);
        }
        if !pc.points.is_empty() {
            pagecounts.insert(title.clone(), pc);
        }
    }

    let mut inc_series = IncidenceSeries::new(s.country.clone());
    for &t in &season_idx {
        inc_series.insert(timeline[t], incidence[t])?;
    }

    let edges = link_graph(&titles, n_signal, &mut rng);

    let mut categories: Vec<String> = titles[..n_signal].to_vec();
    let mut decoys: Vec<&String> = titles[n_signal..].iter().collect();
    decoys.shuffle(&mut rng);
    categories.extend(decoys.into_iter().take(20).cloned());
    categories.sort();

    let truth = GroundTruth {
        scenario: s.clone(),
        weights: titles[..n_signal].iter().cloned().zip(weights).collect(),
        peaks,
        spikes,
        spike_opportunities: season_idx.len() * s.pages,
    };
    Ok(SynthData {
        series,
        pageviews,
        pagecounts,
        incidence: inc_series,
        edges,
        categories,
        truth,
    })
}

/// Signal pages sit on short cycles through the reference; decoys link
/// at random and occasionally touch the reference.
fn link_graph(titles: &[String], n_signal: usize, rng: &mut ChaCha8Rng) -> Vec<(String, String)> {
    let n = titles.len();
    let mut edges = BTreeSet::new();
    for s in 1..n_signal {
        edges.insert((0, s));
        if rng.random_bool(0.7) || n_signal < 3 {
            edges.insert((s, 0));
        } else {
            let mut t = rng.random_range(1..n_signal);
            if t == s {
                t = if s + 1 < n_signal { s + 1 } else { 1 };
            }
            edges.insert((s, t));
            edges.insert((t, 0));
        }
    }
    for d in n_signal..n {
        for _ in 0..3 {
            let t = rng.random_range(0..n);
            if t != d {
                edges.insert((d, t));
            }
        }
        if rng.random_bool(0.15) {
            edges.insert((0, d));
        }
        if rng.random_bool(0.1) {
            edges.insert((d, 0));
        }
    }
    edges
        .into_iter()
        .map(|(a, b)| (titles[a].clone(), titles[b].clone()))
        .collect()
}

fn nth_before(mut w: IsoWeek, n: usize) -> IsoWeek {
    for _ in 0..n {
        w = if w.week > 1 {
            IsoWeek { year: w.year, week: w.week - 1 }
        } else {
            IsoWeek {
                year: w.year - 1,
                week: crate::week::weeks_in_year(w.year - 1),
            }
        };
    }
    w
}

fn nth_after(mut w: IsoWeek, n: usize) -> IsoWeek {
    for _ in 0..n {
        w = w.succ();
    }
    w
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

impl SynthData {
    /// Write every artifact into `dir` (created if needed).
    pub fn write(&self, dir: impl AsRef<Path>, meta: Option<&OutputMeta>) -> Result<SynthPaths> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = SynthPaths {
            pagecounts: dir.join("pagecounts_weekly.csv"),
            pageviews: dir.join("pageviews_weekly.csv"),
            incidence: dir.join("incidence.csv"),
            graph: dir.join("links.tsv"),
            categories: dir.join("categories.txt"),
            truth: dir.join("truth.json"),
        };
        write_weekly_csv(&paths.pagecounts, &self.pagecounts, meta)?;
        write_weekly_csv(&paths.pageviews, &self.pageviews, meta)?;
        write_incidence_csv(&paths.incidence, &self.incidence, meta)?;

        let mut lines = String::new();
        if let Some(m) = meta {
            lines.push_str(&m.comment());
            lines.push('\n');
        }
        for (a, b) in &self.edges {
            lines.push_str(&format!("{a}\t{b}\n"));
        }
        std::fs::write(&paths.graph, lines).map_err(|e| Error::io(&paths.graph, e))?;

        let mut cats = String::new();
        if let Some(m) = meta {
            cats.push_str(&m.comment());
            cats.push('\n');
        }
        for t in &self.categories {
            cats.push_str(t);
            cats.push('\n');
        }
        std::fs::write(&paths.categories, cats).map_err(|e| Error::io(&paths.categories, e))?;

        let file = File::create(&paths.truth).map_err(|e| Error::io(&paths.truth, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &self.truth)?;
        writeln!(w).map_err(|e| Error::io(&paths.truth, e))?;
        Ok(paths)
    }
}
