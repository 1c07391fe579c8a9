//! Run configuration and the file-based stages behind the CLI.
//!
//! Each stage reads and writes files under the run's output directory, and
//! `run_all` is nothing more than the stages in order, so rerunning a single
//! stage reproduces the corresponding part of a full run.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{
    feature_overlap, score_season, selected_features, summarize, top_k_predictors, write_json, write_predictor_csv,
    write_season_csv, EvaluationReport, PredictorReport, SelectionStats,
};
use crate::featureset::{FeatureList, FeatureMethod, RawFeatures, Scaling};
use crate::healthdata::{align, covered_seasons, load_incidence_csv, AlignedTargets, SeasonWindow, Week53Policy};
use crate::ingest::{default_cutover, merge_datasets, read_title_list, read_weekly_csv, SeriesSet};
use crate::linkgraph::{
    cyclerank, ppagerank, read_ranking_csv, write_ranking_csv, CycleRankConfig, CycleScoring, LinkGraph, LoadMode,
    PageRankConfig, RankingResult,
};
use crate::meta::{short_hash, OutputMeta};
use crate::regress::{loso_protocol, LassoConfig, LosoFold, Targets, TrainedModel};
use crate::synth::{SynthPaths, SynthScenario};
use crate::week::IsoWeek;

/// Environment variable naming a directory where rankings are cached.
pub const CACHE_ENV: &str = "WIKIFLU_CACHE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dataset {
    #[serde(rename = "PV")]
    Pv,
    #[serde(rename = "PC+PV")]
    PcPv,
}

impl Dataset {
    pub const ALL: [Dataset; 2] = [Dataset::Pv, Dataset::PcPv];

    /// File-name friendly form.
    pub fn slug(self) -> &'static str {
        match self {
            Dataset::Pv => "pv",
            Dataset::PcPv => "pcpv",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dataset::Pv => "PV",
            Dataset::PcPv => "PC+PV",
        })
    }
}

impl FromStr for Dataset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pv" => Ok(Dataset::Pv),
            "pc+pv" | "pcpv" | "pc-pv" => Ok(Dataset::PcPv),
            _ => Err(Error::InvalidArgument(format!("unknown dataset {s:?} (expected PV or PC+PV)"))),
        }
    }
}

fn method_label(m: FeatureMethod) -> &'static str {
    match m {
        FeatureMethod::Categories => "Categories",
        FeatureMethod::CycleRank => "CycleRank",
        FeatureMethod::PPageRank => "PPageRank",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankingConfig {
    /// Pages kept from each ranking.
    pub top_n: usize,
    pub max_cycle_length: usize,
    pub max_cycle_length_cap: usize,
    pub scoring: CycleScoring,
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Leave the reference page out of the feature lists.
    pub exclude_reference: bool,
}

impl Default for RankingConfig {
    fn default() -> Self {
        let cr = CycleRankConfig::default();
        let pr = PageRankConfig::default();
        Self {
            top_n: 100,
            max_cycle_length: cr.max_length,
            max_cycle_length_cap: cr.max_length_cap,
            scoring: cr.scoring,
            damping: pr.damping,
            tolerance: pr.tolerance,
            max_iterations: pr.max_iterations,
            exclude_reference: false,
        }
    }
}

impl RankingConfig {
    pub fn cyclerank(&self) -> CycleRankConfig {
        CycleRankConfig {
            max_length: self.max_cycle_length,
            scoring: self.scoring,
            max_length_cap: self.max_cycle_length_cap,
        }
    }

    pub fn pagerank(&self) -> PageRankConfig {
        PageRankConfig {
            damping: self.damping,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
        }
    }
}

/// Inputs of one country. Relative paths are resolved against the
/// directory of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountryConfig {
    pub code: String,
    pub language: String,
    #[serde(default = "default_reference")]
    pub reference: String,
    pub graph: PathBuf,
    pub pageviews: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pagecounts: Option<PathBuf>,
    pub incidence: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<PathBuf>,
    /// Seasons to evaluate (`YYYY-YYYY`); all covered seasons when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seasons: Vec<String>,
}

fn default_reference() -> String {
    "Influenza".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Not part of the configuration hash.
    pub output_dir: PathBuf,
    pub cutover: IsoWeek,
    pub week53: Week53Policy,
    pub scaling: Scaling,
    pub methods: Vec<FeatureMethod>,
    pub datasets: Vec<Dataset>,
    /// Predictors listed per cell in the feature analysis.
    pub top_k: usize,
    pub ranking: RankingConfig,
    pub lasso: LassoConfig,
    pub countries: Vec<CountryConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("results"),
            cutover: default_cutover(),
            week53: Week53Policy::default(),
            scaling: Scaling::default(),
            methods: vec![FeatureMethod::Categories, FeatureMethod::CycleRank, FeatureMethod::PPageRank],
            datasets: Dataset::ALL.to_vec(),
            top_k: 5,
            ranking: RankingConfig::default(),
            lasso: LassoConfig::default(),
            countries: Vec::new(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("invalid run configuration: {e}")))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidArgument(format!("cannot read run configuration {}: {e}", path.display()))
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, base).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::InvalidArgument(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidArgument(format!("cannot serialize configuration: {e}")))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Lasso settings with the run seed applied.
    pub fn lasso_config(&self) -> LassoConfig {
        LassoConfig {
            seed: self.seed,
            ..self.lasso.clone()
        }
    }

    /// Hash of everything that can change results; `output_dir` is left out
    /// so the same run written elsewhere is byte-identical.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        short_hash(&json)
    }

    pub fn meta(&self) -> OutputMeta {
        OutputMeta::new(self.config_hash())
    }

    pub fn country(&self, code: &str) -> Result<&CountryConfig> {
        self.countries
            .iter()
            .find(|c| c.code == code)
            .ok_or_else(|| Error::InvalidArgument(format!("country {code:?} is not in the configuration")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.countries.is_empty() {
            return bad("no countries configured".into());
        }
        if self.methods.is_empty() || self.datasets.is_empty() {
            return bad("methods and datasets must not be empty".into());
        }
        if self.ranking.top_n == 0 || self.top_k == 0 {
            return bad("ranking.top_n and top_k must be >= 1".into());
        }
        self.lasso_config().validate()?;
        let mut seen = HashSet::new();
        for c in &self.countries {
            if !seen.insert(&c.code) {
                return bad(format!("country {} listed twice", c.code));
            }
            let check = |what: &str, p: Option<&PathBuf>, needed: bool| -> Result<()> {
                match p {
                    Some(p) => {
                        let full = self.resolve(p);
                        if !full.is_file() {
                            return bad(format!("country {}: {what} file {} does not exist", c.code, full.display()));
                        }
                    }
                    None if needed => {
                        return bad(format!("country {}: no {what} file configured", c.code));
                    }
                    None => {}
                }
                Ok(())
            };
            let graph_needed = self.methods.iter().any(|m| *m != FeatureMethod::Categories);
            check("graph", Some(&c.graph), graph_needed)?;
            check("pageviews", Some(&c.pageviews), true)?;
            check("incidence", Some(&c.incidence), true)?;
            check("pagecounts", c.pagecounts.as_ref(), self.datasets.contains(&Dataset::PcPv))?;
            check(
                "categories",
                c.categories.as_ref(),
                self.methods.contains(&FeatureMethod::Categories),
            )?;
            for s in &c.seasons {
                SeasonWindow::from_label(s, self.week53)?;
            }
        }
        Ok(())
    }

    /// Configuration for the files written by [`crate::synth::SynthData::write`]
    /// into the same directory.
    pub fn for_synth(s: &SynthScenario, paths: &SynthPaths) -> Self {
        let name = |p: &Path| PathBuf::from(p.file_name().expect("file name"));
        RunConfig {
            seed: s.seed,
            cutover: s.cutover,
            countries: vec![CountryConfig {
                code: s.country.clone(),
                language: "xx".into(),
                reference: s.reference.clone(),
                graph: name(&paths.graph),
                pageviews: name(&paths.pageviews),
                pagecounts: Some(name(&paths.pagecounts)),
                incidence: name(&paths.incidence),
                categories: Some(name(&paths.categories)),
                seasons: Vec::new(),
            }],
            base_dir: paths.graph.parent().map(Path::to_path_buf).unwrap_or_default(),
            ..RunConfig::default()
        }
    }
}

/// One method x dataset evaluation of a country.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId {
    pub country: String,
    pub method: FeatureMethod,
    pub dataset: Dataset,
}

impl CellId {
    pub fn dir(&self, out: &Path) -> PathBuf {
        out.join(&self.country).join(format!("{}-{}", self.method, self.dataset.slug()))
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.country, self.method, self.dataset)
    }
}

pub fn ranking_path(out: &Path, country: &str, method: FeatureMethod) -> PathBuf {
    out.join(country).join(format!("ranking_{method}.csv"))
}

pub fn features_path(out: &Path, country: &str, method: FeatureMethod) -> PathBuf {
    out.join(country).join(format!("features_{method}.txt"))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_graph(path: &Path) -> Result<LinkGraph> {
    let (g, stats) = LinkGraph::load_edge_list(path, LoadMode::Lenient)?;
    if stats.malformed > 0 || stats.self_loops > 0 || stats.duplicates > 0 {
        log::warn!(
            "{}: skipped {} malformed lines, {} self-loops, {} duplicate edges",
            path.display(),
            stats.malformed,
            stats.self_loops,
            stats.duplicates
        );
    }
    Ok(g)
}

/// Rank a graph with CycleRank or PPageRank around `reference`.
pub fn rank_graph(g: &LinkGraph, method: FeatureMethod, reference: &str, cfg: &RankingConfig) -> Result<RankingResult> {
    match method {
        FeatureMethod::CycleRank => cyclerank(g, reference, &cfg.cyclerank()),
        FeatureMethod::PPageRank => ppagerank(g, &[reference], &cfg.pagerank()),
        FeatureMethod::Categories => Err(Error::InvalidArgument("categories lists are not graph rankings".into())),
    }
}

/// Rank stage: write the ranking CSV of a country. Uses the cache directory
/// named by [`CACHE_ENV`] when set.
pub fn stage_rank(cfg: &RunConfig, country: &CountryConfig, method: FeatureMethod, out: &Path) -> Result<RankingResult> {
    let graph_path = cfg.resolve(&country.graph);
    let meta = cfg.meta();
    create_parent(out)?;
    let cache = std::env::var_os(CACHE_ENV).map(PathBuf::from);
    let key = match &cache {
        Some(_) => {
            let bytes = std::fs::read(&graph_path).map_err(|e| Error::io(&graph_path, e))?;
            let params = serde_json::to_vec(&(method, &country.reference, &cfg.ranking))?;
            Some(short_hash(&[bytes, params].concat()))
        }
        None => None,
    };
    if let (Some(dir), Some(key)) = (&cache, &key) {
        let cached = dir.join(format!("ranking-{key}.csv"));
        if cached.is_file() {
            log::info!("using cached ranking {}", cached.display());
            let r = read_ranking_csv(&cached)?;
            write_ranking_csv(out, &r, Some(&meta))?;
            return read_ranking_csv(out);
        }
    }
    let g = load_graph(&graph_path)?;
    let r = rank_graph(&g, method, &country.reference, &cfg.ranking)?;
    write_ranking_csv(out, &r, Some(&meta))?;
    if let (Some(dir), Some(key)) = (&cache, &key) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_ranking_csv(dir.join(format!("ranking-{key}.csv")), &r, None)?;
    }
    read_ranking_csv(out)
}

/// Feature stage: the page list of one method, written to `out`.
/// Graph methods derive it from the ranking CSV as stored on disk.
pub fn stage_features(
    cfg: &RunConfig,
    country: &CountryConfig,
    method: FeatureMethod,
    ranking_csv: Option<&Path>,
    out: &Path,
) -> Result<FeatureList> {
    let list = match method {
        FeatureMethod::Categories => {
            let path = country
                .categories
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("country {}: no categories file", country.code)))?;
            let mut titles = read_title_list(cfg.resolve(path))?;
            if cfg.ranking.exclude_reference {
                titles.retain(|t| *t != country.reference);
            }
            FeatureList::new(method, &country.language, titles)?
        }
        _ => {
            let path = ranking_csv.ok_or_else(|| Error::InvalidArgument("graph methods need a ranking CSV".into()))?;
            let r = read_ranking_csv(path)?;
            let mut exclude = HashSet::new();
            if cfg.ranking.exclude_reference {
                exclude.insert(country.reference.clone());
            }
            FeatureList::from_ranking(&r, cfg.ranking.top_n, &exclude, &country.language)?
        }
    };
    create_parent(out)?;
    list.write(out, Some(&cfg.meta()))?;
    Ok(list)
}

/// Page series of a dataset: pageviews alone, or pagecounts before the
/// cutover joined with pageviews from it on.
pub fn load_dataset(cfg: &RunConfig, country: &CountryConfig, dataset: Dataset) -> Result<SeriesSet> {
    let pv = read_weekly_csv(cfg.resolve(&country.pageviews))?;
    match dataset {
        Dataset::Pv => Ok(pv),
        Dataset::PcPv => {
            let path = country
                .pagecounts
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("country {}: no pagecounts file", country.code)))?;
            let pc = read_weekly_csv(cfg.resolve(path))?;
            Ok(merge_datasets(&pc, &pv, cfg.cutover))
        }
    }
}

/// Seasons evaluated for a dataset. The PV dataset only covers seasons that
/// start after the cutover.
pub fn evaluation_seasons(
    cfg: &RunConfig,
    country: &CountryConfig,
    inc: &crate::healthdata::IncidenceSeries,
    dataset: Dataset,
) -> Result<Vec<SeasonWindow>> {
    let mut seasons = if country.seasons.is_empty() {
        covered_seasons(inc, cfg.week53)
    } else {
        country
            .seasons
            .iter()
            .map(|s| SeasonWindow::from_label(s, cfg.week53))
            .collect::<Result<Vec<_>>>()?
    };
    if dataset == Dataset::Pv {
        seasons.retain(|s| s.weeks[0] >= cfg.cutover);
    }
    if seasons.len() < 2 {
        return Err(Error::Data(format!(
            "country {} has {} evaluable {dataset} season(s); leave-one-season-out needs 2",
            country.code,
            seasons.len()
        )));
    }
    Ok(seasons)
}

/// Feature columns and aligned targets of one cell.
pub struct CellInputs {
    pub raw: RawFeatures,
    pub aligned: AlignedTargets,
}

pub fn cell_inputs(cfg: &RunConfig, country: &CountryConfig, dataset: Dataset, list: &FeatureList) -> Result<CellInputs> {
    let inc = load_incidence_csv(cfg.resolve(&country.incidence))?;
    if inc.country != country.code {
        log::warn!("incidence file is labelled {:?}, configured as {:?}", inc.country, country.code);
    }
    let seasons = evaluation_seasons(cfg, country, &inc, dataset)?;
    let aligned = align(&inc, &seasons)?;
    let series = load_dataset(cfg, country, dataset)?;
    let raw = RawFeatures::build(list, &series, &aligned.rows)?;
    Ok(CellInputs { raw, aligned })
}

/// Everything the train stage persists for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelsFile {
    pub cell: CellId,
    pub scaling: Scaling,
    pub seasons: Vec<String>,
    pub features: Vec<String>,
    pub missing_features: Vec<String>,
    pub folds: Vec<LosoFold>,
}

impl ModelsFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn models(&self) -> Vec<TrainedModel> {
        self.folds.iter().map(|f| f.model.clone()).collect()
    }
}

/// One held-out week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub season: String,
    pub iso_year: i32,
    pub iso_week: u32,
    pub truth: f64,
    pub prediction: f64,
    pub raw_prediction: f64,
    pub model: String,
    pub dataset: String,
}

pub fn write_predictions_csv(path: &Path, rows: &[PredictionRow], meta: Option<&OutputMeta>) -> Result<()> {
    create_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    if let Some(meta) = meta {
        writeln!(w, "{}", meta.comment()).map_err(|e| Error::io(path, e))?;
    }
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    if rows.is_empty() {
        csv.write_record([
            "season", "iso_year", "iso_week", "truth", "prediction", "raw_prediction", "model", "dataset",
        ])?;
    }
    csv.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<PredictionRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let mut out = Vec::new();
    for r in rdr.deserialize() {
        out.push(r?);
    }
    Ok(out)
}

/// Train stage: leave-one-season-out models and held-out predictions of
/// one cell, written to `models.json` and `predictions.csv` in `dir`.
pub fn stage_train(cfg: &RunConfig, cell: &CellId, features: &Path, dir: &Path) -> Result<ModelsFile> {
    let country = cfg.country(&cell.country)?;
    let list = FeatureList::read(features, cell.method, &country.language)?;
    let CellInputs { raw, aligned } = cell_inputs(cfg, country, cell.dataset, &list)?;
    let labels: Vec<String> = aligned.seasons.iter().map(|s| s.label.clone()).collect();
    let targets = Targets::new(aligned.targets.clone());
    let outcome = loso_protocol(&raw, &targets, &aligned.season_of_row, &labels, &cfg.lasso_config(), cfg.scaling)?;

    for fold in &outcome.folds {
        if let Some(r) = fold.test_rows.iter().find(|r| fold.audit.rows.contains(r)) {
            return Err(Error::Data(format!(
                "{cell}: held-out row {} of season {} was read during training",
                aligned.rows[*r], fold.season
            )));
        }
    }

    let mut rows = Vec::with_capacity(aligned.len());
    for fold in &outcome.folds {
        for (k, &i) in fold.test_rows.iter().enumerate() {
            let w = aligned.rows[i];
            rows.push(PredictionRow {
                season: fold.season.clone(),
                iso_year: w.year,
                iso_week: w.week,
                truth: aligned.targets[i],
                prediction: fold.prediction.reported[k],
                raw_prediction: fold.prediction.raw[k],
                model: method_label(cell.method).to_string(),
                dataset: cell.dataset.to_string(),
            });
        }
    }
    let meta = cfg.meta();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_predictions_csv(&dir.join("predictions.csv"), &rows, Some(&meta))?;
    let file = ModelsFile {
        cell: cell.clone(),
        scaling: outcome.scaling,
        seasons: labels,
        features: raw.titles.clone(),
        missing_features: raw.missing.clone(),
        folds: outcome.folds,
    };
    write_json(dir.join("models.json"), &file, Some(&meta))?;
    Ok(file)
}

/// Score predictions season by season, in file order.
pub fn evaluate_predictions(cell: &CellId, rows: &[PredictionRow]) -> Result<EvaluationReport> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&PredictionRow>> = BTreeMap::new();
    for r in rows {
        if !groups.contains_key(r.season.as_str()) {
            order.push(&r.season);
        }
        groups.entry(&r.season).or_default().push(r);
    }
    let mut scores = Vec::with_capacity(order.len());
    for s in order {
        let g = &groups[s];
        let weeks = g
            .iter()
            .map(|r| IsoWeek::new(r.iso_year, r.iso_week))
            .collect::<Result<Vec<_>>>()?;
        let truth: Vec<f64> = g.iter().map(|r| r.truth).collect();
        let pred: Vec<f64> = g.iter().map(|r| r.prediction).collect();
        scores.push(score_season(s, &weeks, &truth, &pred)?);
    }
    summarize(&cell.country, &cell.method.to_string(), &cell.dataset.to_string(), scores)
}

/// Evaluate stage: `evaluation.json` and `seasons.csv` next to the
/// predictions.
pub fn stage_evaluate(cfg: &RunConfig, cell: &CellId, dir: &Path) -> Result<EvaluationReport> {
    let rows = read_predictions_csv(&dir.join("predictions.csv"))?;
    let report = evaluate_predictions(cell, &rows)?;
    let meta = cfg.meta();
    write_json(dir.join("evaluation.json"), &report, Some(&meta))?;
    write_season_csv(dir.join("seasons.csv"), &report, Some(&meta))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFeatures {
    pub cell: CellId,
    pub list_size: usize,
    pub selection: SelectionStats,
    pub predictors: PredictorReport,
}

/// Percentage of `from`'s pages that also occur in `to`; `None` when `from`
/// is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub country: String,
    pub from: String,
    pub to: String,
    pub percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAnalysis {
    pub cells: Vec<CellFeatures>,
    /// Between the input feature lists of the methods.
    pub list_overlap: Vec<Overlap>,
    /// Between the pages selected by the trained models of each cell.
    pub model_overlap: Vec<Overlap>,
}

fn overlaps<'a>(country: &str, sets: &[(String, Vec<&'a str>)]) -> Vec<Overlap> {
    let mut out = Vec::new();
    for (a, sa) in sets {
        for (b, sb) in sets {
            if a != b {
                out.push(Overlap {
                    country: country.to_string(),
                    from: a.clone(),
                    to: b.clone(),
                    percent: feature_overlap(sa, sb).ok(),
                });
            }
        }
    }
    out
}

/// Analysis stage over the trained cells found in the output directory.
pub fn stage_analyze(cfg: &RunConfig, cells: &[CellId]) -> Result<FeatureAnalysis> {
    let out = cfg.output_path();
    let mut per_cell = Vec::new();
    let mut list_overlap = Vec::new();
    let mut model_overlap = Vec::new();
    for country in &cfg.countries {
        let mine: Vec<&CellId> = cells.iter().filter(|c| c.country == country.code).collect();
        if mine.is_empty() {
            continue;
        }
        let graph = match load_graph(&cfg.resolve(&country.graph)) {
            Ok(g) => Some(g),
            Err(e) => {
                log::warn!("country {}: no graph for distances ({e})", country.code);
                None
            }
        };
        let mut lists: BTreeMap<FeatureMethod, FeatureList> = BTreeMap::new();
        for c in &mine {
            if !lists.contains_key(&c.method) {
                let l = FeatureList::read(features_path(&out, &country.code, c.method), c.method, &country.language)?;
                lists.insert(c.method, l);
            }
        }
        let list_sets: Vec<(String, Vec<&str>)> = lists
            .iter()
            .map(|(m, l)| (m.to_string(), l.titles.iter().map(String::as_str).collect()))
            .collect();
        list_overlap.extend(overlaps(&country.code, &list_sets));

        let mut analysed = Vec::new();
        for c in &mine {
            let file = ModelsFile::read(&c.dir(&out).join("models.json"))?;
            let models = file.models();
            let list = &lists[&c.method];
            let inputs = cell_inputs(cfg, country, c.dataset, list)?;
            let predictors = top_k_predictors(
                &models,
                &inputs.raw,
                &inputs.aligned.targets,
                graph.as_ref(),
                &country.reference,
                cfg.top_k,
            )?;
            analysed.push(CellFeatures {
                cell: (*c).clone(),
                list_size: list.titles.len(),
                selection: selected_features(&models),
                predictors,
            });
        }
        let model_sets: Vec<(String, Vec<&str>)> = analysed
            .iter()
            .map(|a| {
                (
                    format!("{} {}", a.cell.method, a.cell.dataset),
                    a.selection.union.iter().map(String::as_str).collect(),
                )
            })
            .collect();
        model_overlap.extend(overlaps(&country.code, &model_sets));
        per_cell.extend(analysed);
    }
    let analysis = FeatureAnalysis {
        cells: per_cell,
        list_overlap,
        model_overlap,
    };
    write_analysis(cfg, &analysis)?;
    Ok(analysis)
}

fn pct(p: Option<f64>) -> String {
    p.map(|v| format!("{v:.1}")).unwrap_or_else(|| "n/a".into())
}

fn md_meta(meta: &OutputMeta) -> String {
    format!("<!-- {} -->\n", meta.comment().trim_start_matches("# "))
}

fn write_analysis(cfg: &RunConfig, a: &FeatureAnalysis) -> Result<()> {
    let out = cfg.output_path();
    let meta = cfg.meta();
    write_json(out.join("feature_analysis.json"), a, Some(&meta))?;

    let mut sizes = format!("{}\ncountry,method,dataset,list_size,selected_union,min_max_mean\n", meta.comment());
    for c in &a.cells {
        sizes.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.cell.country,
            c.cell.method,
            c.cell.dataset,
            c.list_size,
            c.selection.union.len(),
            c.selection.cell()
        ));
        let dir = c.cell.dir(&out);
        write_predictor_csv(dir.join("predictors.csv"), &c.predictors, Some(&meta))?;
    }
    write_text(&out.join("feature_counts.csv"), &sizes)?;

    let overlap_csv = |rows: &[Overlap]| {
        let mut s = format!("{}\ncountry,from,to,percent\n", meta.comment());
        for o in rows {
            s.push_str(&format!("{},{},{},{}\n", o.country, o.from, o.to, pct(o.percent)));
        }
        s
    };
    write_text(&out.join("list_overlap.csv"), &overlap_csv(&a.list_overlap))?;
    write_text(&out.join("model_overlap.csv"), &overlap_csv(&a.model_overlap))?;

    let mut md = md_meta(&meta);
    md.push_str("# Feature analysis\n\n## Selected features per season model (min / max / mean)\n\n");
    md.push_str("| Country | Model | Dataset | Feature list | Selected |\n|---|---|---|---|---|\n");
    for c in &a.cells {
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            c.cell.country,
            method_label(c.cell.method),
            c.cell.dataset,
            c.list_size,
            c.selection.cell()
        ));
    }
    md.push_str("\n## Feature list overlap (% of row set found in column set)\n\n");
    push_overlap_md(&mut md, &a.list_overlap);
    md.push_str("\n## Model feature overlap (% of row set found in column set)\n\n");
    push_overlap_md(&mut md, &a.model_overlap);
    md.push_str(&format!("\n## Top-{} predictors by mean weight\n", cfg.top_k));
    for c in &a.cells {
        md.push_str(&format!(
            "\n### {} {} {}\n\n| Page | Mean weight | PCC | D_I |\n|---|---|---|---|\n",
            c.cell.country,
            method_label(c.cell.method),
            c.cell.dataset
        ));
        for e in &c.predictors.entries {
            let d = e.distance.map(|d| d.table_label()).unwrap_or_else(|| "n/a".into());
            md.push_str(&format!("| {} | {:.4e} | {:.3} | {} |\n", e.title, e.mean_weight, e.pcc, d));
        }
    }
    write_text(&out.join("feature_analysis.md"), &md)
}

fn push_overlap_md(md: &mut String, rows: &[Overlap]) {
    let mut by_country: BTreeMap<&str, Vec<&Overlap>> = BTreeMap::new();
    for o in rows {
        by_country.entry(&o.country).or_default().push(o);
    }
    for (country, rows) in by_country {
        let mut names: Vec<&str> = Vec::new();
        for o in &rows {
            for n in [o.from.as_str(), o.to.as_str()] {
                if !names.contains(&n) {
                    names.push(n);
                }
            }
        }
        md.push_str(&format!("{country}\n\n| |"));
        for n in &names {
            md.push_str(&format!(" {n} |"));
        }
        md.push_str("\n|---|");
        md.push_str(&"---|".repeat(names.len()));
        md.push('\n');
        for a in &names {
            md.push_str(&format!("| {a} |"));
            for b in &names {
                let cell = if a == b {
                    "100.0".to_string()
                } else {
                    rows.iter()
                        .find(|o| o.from == *a && o.to == *b)
                        .map(|o| pct(o.percent))
                        .unwrap_or_default()
                };
                md.push_str(&format!(" {cell} |"));
            }
            md.push('\n');
        }
        md.push('\n');
    }
}

/// Result of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub cell: CellId,
    pub report: Option<EvaluationReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub cells: Vec<CellOutcome>,
    pub analysis: Option<FeatureAnalysis>,
    pub analysis_error: Option<String>,
}

impl RunSummary {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count() + usize::from(self.analysis_error.is_some())
    }
}

/// All cells of the configuration in report order.
pub fn grid(cfg: &RunConfig) -> Vec<CellId> {
    let mut cells = Vec::new();
    for c in &cfg.countries {
        for &method in &cfg.methods {
            for &dataset in &cfg.datasets {
                cells.push(CellId {
                    country: c.code.clone(),
                    method,
                    dataset,
                });
            }
        }
    }
    cells
}

/// Feature lists of every country and method, then train and evaluate every
/// cell, then the feature analysis and combined reports. Failures are kept
/// per cell; the remaining cells still run.
pub fn run_all(cfg: &RunConfig, jobs: usize) -> Result<RunSummary> {
    cfg.validate()?;
    let out = cfg.output_path();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;

    let mut pairs: Vec<(&CountryConfig, FeatureMethod)> = Vec::new();
    for c in &cfg.countries {
        for &m in &cfg.methods {
            pairs.push((c, m));
        }
    }
    let list_errors: BTreeMap<(String, FeatureMethod), String> = pool.install(|| {
        pairs
            .par_iter()
            .filter_map(|(c, m)| {
                let run = || -> Result<()> {
                    let ranking = ranking_path(&out, &c.code, *m);
                    let ranking = if *m == FeatureMethod::Categories {
                        None
                    } else {
                        stage_rank(cfg, c, *m, &ranking)?;
                        Some(ranking)
                    };
                    stage_features(cfg, c, *m, ranking.as_deref(), &features_path(&out, &c.code, *m))?;
                    Ok(())
                };
                run().err().map(|e| ((c.code.clone(), *m), e.to_string()))
            })
            .collect()
    });

    let cells = grid(cfg);
    let outcomes: Vec<CellOutcome> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let result = match list_errors.get(&(cell.country.clone(), cell.method)) {
                    Some(e) => Err(format!("feature list: {e}")),
                    None => {
                        let dir = cell.dir(&out);
                        stage_train(cfg, cell, &features_path(&out, &cell.country, cell.method), &dir)
                            .and_then(|_| stage_evaluate(cfg, cell, &dir))
                            .map_err(|e| e.to_string())
                    }
                };
                if let Err(e) = &result {
                    log::error!("cell {cell} failed: {e}");
                }
                CellOutcome {
                    cell: cell.clone(),
                    report: result.as_ref().ok().cloned(),
                    error: result.err(),
                }
            })
            .collect()
    });

    let done: Vec<CellId> = outcomes.iter().filter(|o| o.error.is_none()).map(|o| o.cell.clone()).collect();
    let (analysis, analysis_error) = match stage_analyze(cfg, &done) {
        Ok(a) => (Some(a), None),
        Err(e) => {
            log::error!("feature analysis failed: {e}");
            (None, Some(e.to_string()))
        }
    };
    let summary = RunSummary {
        cells: outcomes,
        analysis,
        analysis_error,
    };
    write_combined_report(cfg, &summary)?;
    Ok(summary)
}

/// `report.csv`, `report.md` and `summary.json` in the output directory.
pub fn write_combined_report(cfg: &RunConfig, s: &RunSummary) -> Result<()> {
    let out = cfg.output_path();
    let meta = cfg.meta();
    let selection: BTreeMap<&CellId, String> = s
        .analysis
        .iter()
        .flat_map(|a| a.cells.iter().map(|c| (&c.cell, c.selection.cell())))
        .collect();

    let mut csv = format!(
        "{}\ncountry,method,dataset,status,seasons,mean_pcc,exact_peaks,within_2_peaks,peaks,selected_features\n",
        meta.comment()
    );
    for c in &s.cells {
        let sel = selection.get(&c.cell).cloned().unwrap_or_default();
        match &c.report {
            Some(r) => csv.push_str(&format!(
                "{},{},{},ok,{},{:.6},{},{},{},{}\n",
                c.cell.country,
                c.cell.method,
                c.cell.dataset,
                r.seasons.len(),
                r.mean_pcc,
                r.exact_peaks,
                r.within_2_peaks,
                r.peaks,
                sel
            )),
            None => csv.push_str(&format!(
                "{},{},{},failed,,,,,,\n",
                c.cell.country, c.cell.method, c.cell.dataset
            )),
        }
    }
    write_text(&out.join("report.csv"), &csv)?;

    let lookup = |country: &str, m: FeatureMethod, d: Dataset| {
        s.cells
            .iter()
            .find(|c| c.cell.country == country && c.cell.method == m && c.cell.dataset == d)
    };
    let mut md = md_meta(&meta);
    md.push_str("# Nowcast results\n");
    let tables: [(&str, fn(&EvaluationReport) -> String); 2] = [
        ("Mean PCC over held-out seasons", |r| format!("{:.3}", r.mean_pcc)),
        ("Peak weeks: exact (within +-2)", |r| r.peaks.clone()),
    ];
    for (title, cell_text) in tables {
        md.push_str(&format!("\n## {title}\n\n| Country | Model |"));
        for d in &cfg.datasets {
            md.push_str(&format!(" {d} |"));
        }
        md.push_str("\n|---|---|");
        md.push_str(&"---|".repeat(cfg.datasets.len()));
        md.push('\n');
        for c in &cfg.countries {
            for &m in &cfg.methods {
                md.push_str(&format!("| {} | {} |", c.code, method_label(m)));
                for &d in &cfg.datasets {
                    let text = match lookup(&c.code, m, d) {
                        Some(CellOutcome { report: Some(r), .. }) => cell_text(r),
                        Some(_) => "FAILED".to_string(),
                        None => String::new(),
                    };
                    md.push_str(&format!(" {text} |"));
                }
                md.push('\n');
            }
        }
    }
    let failures: Vec<&CellOutcome> = s.cells.iter().filter(|c| c.error.is_some()).collect();
    if !failures.is_empty() || s.analysis_error.is_some() {
        md.push_str("\n## Failures\n\n");
        for f in failures {
            md.push_str(&format!("- {}: {}\n", f.cell, f.error.as_deref().unwrap_or_default()));
        }
        if let Some(e) = &s.analysis_error {
            md.push_str(&format!("- feature analysis: {e}\n"));
        }
    }
    write_text(&out.join("report.md"), &md)?;
    write_json(out.join("summary.json"), s, Some(&meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_labels() {
        assert_eq!(Dataset::PcPv.to_string(), "PC+PV");
        assert_eq!("pc+pv".parse::<Dataset>().unwrap(), Dataset::PcPv);
        assert_eq!("PV".parse::<Dataset>().unwrap(), Dataset::Pv);
        assert!("xx".parse::<Dataset>().is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.countries.push(CountryConfig {
            code: "IT".into(),
            language: "it".into(),
            reference: "Influenza".into(),
            graph: "g.tsv".into(),
            pageviews: "pv.csv".into(),
            pagecounts: None,
            incidence: "inc.csv".into(),
            categories: None,
            seasons: vec!["2016-2017".into()],
        });
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml_str(&text, ".").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::default();
        let b = RunConfig {
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        let c = RunConfig { seed: 1, ..a.clone() };
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("sede = 3", ".").is_err());
        let cfg = RunConfig::from_toml_str("seed = 3\ndatasets = [\"PC+PV\"]", ".").unwrap();
        assert_eq!(cfg.datasets, [Dataset::PcPv]);
    }

    #[test]
    fn validation_names_missing_files() {
        let mut cfg = RunConfig::default();
        cfg.countries.push(CountryConfig {
            code: "IT".into(),
            language: "it".into(),
            reference: "Influenza".into(),
            graph: "/nonexistent/g.tsv".into(),
            pageviews: "pv.csv".into(),
            pagecounts: None,
            incidence: "inc.csv".into(),
            categories: None,
            seasons: vec![],
        });
        let e = cfg.validate().unwrap_err().to_string();
        assert!(e.contains("graph") && e.contains("/nonexistent/g.tsv"), "{e}");
    }
}
