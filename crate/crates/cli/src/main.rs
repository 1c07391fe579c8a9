use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use wikiflu::featureset::{build_matrix, FeatureList, FeatureMethod, Scaling};
use wikiflu::healthdata::{align, load_incidence_csv, Week53Policy};
use wikiflu::ingest::{
    ingest_files, merge_datasets, read_title_list, read_weekly_csv, write_weekly_csv, Dialect, RecordFilter,
};
use wikiflu::linkgraph::{write_ranking_csv, CycleScoring, LoadMode};
use wikiflu::meta::{short_hash, OutputMeta};
use wikiflu::pipeline::{
    evaluation_seasons, features_path, grid, load_dataset, load_graph, rank_graph, ranking_path, run_all,
    stage_analyze, stage_evaluate, stage_features, stage_rank, stage_train, CellId, Dataset, RankingConfig,
    RunConfig,
};
use wikiflu::regress::Optimizer;
use wikiflu::synth::{generate, SynthScenario};
use wikiflu::IsoWeek;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "wikiflu",
    version,
    about = "Nowcast influenza-like-illness incidence from Wikipedia page views",
    after_help = "Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 some grid cells failed.\n\
                  Set WIKIFLU_CACHE_DIR to reuse graph rankings across runs."
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate hourly dump files, or join two weekly datasets.
    #[command(subcommand)]
    Ingest(IngestCmd),
    /// Rank pages of a link graph around a reference page.
    Rank(RankArgs),
    /// Write the standardized design matrix of one cell.
    BuildMatrix(CellArgs),
    /// Leave-one-season-out training of one cell.
    Train(CellArgs),
    /// Score the held-out predictions of one cell.
    Evaluate(CellArgs),
    /// Feature-set sizes, overlaps and top predictors of trained cells.
    AnalyzeFeatures(ConfigArgs),
    /// Generate a synthetic dataset and a run configuration for it.
    Synth(SynthArgs),
    /// Run the whole method x dataset grid and write the combined report.
    RunAll(RunAllArgs),
}

#[derive(Subcommand)]
enum IngestCmd {
    /// Sum hourly dump files (plain or gzip) into weekly page counts.
    Dumps(DumpArgs),
    /// Pagecounts before the cutover week, pageviews from it on.
    Merge(MergeArgs),
}

#[derive(Args)]
struct DumpArgs {
    /// `pagecounts` or `pageviews`.
    #[arg(long)]
    dialect: Dialect,
    /// Project code, e.g. `it` (`it.m` is also accepted for pageviews).
    #[arg(long)]
    project: String,
    /// Keep only the titles listed in this file.
    #[arg(long)]
    pages: Option<PathBuf>,
    /// Skip malformed lines instead of failing.
    #[arg(long)]
    lenient: bool,
    /// Weekly CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Ingestion statistics (JSON).
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Dump files; the hour is taken from `YYYYMMDD-HHMMSS` in the name.
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

#[derive(Args)]
struct MergeArgs {
    #[arg(long)]
    pagecounts: PathBuf,
    #[arg(long)]
    pageviews: PathBuf,
    /// First week taken from pageviews.
    #[arg(long, default_value = "2016-W36")]
    cutover: IsoWeek,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    /// Edge list (`source<TAB>target`).
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    method: FeatureMethod,
    /// Reference page.
    #[arg(long = "ref")]
    reference: Option<String>,
    /// Maximum cycle length for CycleRank.
    #[arg(long)]
    k: Option<usize>,
    /// `inverse-length` or `exp-decay`.
    #[arg(long, value_parser = parse_scoring)]
    scoring: Option<CycleScoring>,
    #[arg(long)]
    damping: Option<f64>,
    /// Ranking CSV to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Take graph, reference and ranking settings from a run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Country of the configuration to rank.
    #[arg(long)]
    country: Option<String>,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// `train-only` or `global`.
    #[arg(long, value_parser = parse_scaling)]
    scaling: Option<Scaling>,
    /// `cd` or `sgd`.
    #[arg(long)]
    optimizer: Option<Optimizer>,
    /// Pages kept from each graph ranking.
    #[arg(long)]
    top_n: Option<usize>,
    /// `include` or `drop`.
    #[arg(long, value_parser = parse_week53)]
    week53: Option<Week53Policy>,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct CellArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    country: String,
    #[arg(long)]
    method: FeatureMethod,
    /// `PV` or `PC+PV`.
    #[arg(long)]
    dataset: Dataset,
    /// Feature list; defaults to the one in the output directory.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Cell directory; defaults to `<output_dir>/<country>/<method>-<dataset>`.
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Matrix CSV (build-matrix only).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for the generated files and `run.toml`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 6)]
    seasons: usize,
    #[arg(long, default_value_t = 200)]
    pages: usize,
    #[arg(long, default_value_t = 10)]
    signal_pages: usize,
    /// Noise standard deviation relative to each signal page's spread.
    #[arg(long, default_value_t = 0.1)]
    noise_std: f64,
    #[arg(long, default_value_t = 0.02)]
    spike_rate: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Start year of the first season.
    #[arg(long, default_value_t = 2014)]
    first_season: i32,
    #[arg(long, default_value = "XX")]
    country: String,
}

#[derive(Args)]
struct RunAllArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Grid cells run in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn parse_scoring(s: &str) -> std::result::Result<CycleScoring, String> {
    match s {
        "inverse-length" | "1/l" => Ok(CycleScoring::InverseLength),
        "exp-decay" | "exp" => Ok(CycleScoring::ExpDecay),
        _ => Err(format!("unknown scoring {s:?} (inverse-length or exp-decay)")),
    }
}

fn parse_scaling(s: &str) -> std::result::Result<Scaling, String> {
    match s {
        "train-only" => Ok(Scaling::TrainOnly),
        "global" => Ok(Scaling::Global),
        _ => Err(format!("unknown scaling {s:?} (train-only or global)")),
    }
}

fn parse_week53(s: &str) -> std::result::Result<Week53Policy, String> {
    match s {
        "include" => Ok(Week53Policy::Include),
        "drop" => Ok(Week53Policy::Drop),
        _ => Err(format!("unknown week-53 policy {s:?} (include or drop)")),
    }
}

fn load_config(a: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&a.config)?;
    let o = &a.overrides;
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = &o.output_dir {
        cfg.output_dir = std::env::current_dir()?.join(v);
    }
    if let Some(v) = o.scaling {
        cfg.scaling = v;
    }
    if let Some(v) = o.optimizer {
        cfg.lasso.optimizer = v;
    }
    if let Some(v) = o.top_n {
        cfg.ranking.top_n = v;
    }
    if let Some(v) = o.week53 {
        cfg.week53 = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ingest_dumps(a: DumpArgs) -> Result<()> {
    let mut filter = RecordFilter::new(a.project);
    if let Some(p) = &a.pages {
        filter = filter.with_pages(read_title_list(p)?);
    }
    let mode = if a.lenient { LoadMode::Lenient } else { LoadMode::Strict };
    let (series, stats) = ingest_files(&a.files, a.dialect, &filter, mode)?;
    let params = serde_json::json!({
        "dialect": a.dialect.to_string(),
        "project": filter.project,
        "files": a.files.iter().map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned())).collect::<Vec<_>>(),
    });
    let meta = OutputMeta::new(short_hash(params.to_string().as_bytes()));
    write_weekly_csv(&a.out, &series, Some(&meta))?;
    info!(
        "{} files, {} lines: {} accepted, {} filtered, {} malformed",
        stats.files, stats.lines, stats.accepted, stats.filtered, stats.malformed
    );
    if let Some(p) = a.stats {
        wikiflu::evaluate::write_json(p, &stats, Some(&meta))?;
    }
    Ok(())
}

fn ingest_merge(a: MergeArgs) -> Result<()> {
    let pc = read_weekly_csv(&a.pagecounts)?;
    let pv = read_weekly_csv(&a.pageviews)?;
    let merged = merge_datasets(&pc, &pv, a.cutover);
    let meta = OutputMeta::new(short_hash(format!("merge cutover={}", a.cutover).as_bytes()));
    write_weekly_csv(&a.out, &merged, Some(&meta))?;
    Ok(())
}

fn rank(a: RankArgs) -> Result<()> {
    if a.method == FeatureMethod::Categories {
        bail!(wikiflu::Error::InvalidArgument("rank supports cyclerank and ppagerank".into()));
    }
    if let Some(cfg_path) = &a.config {
        let mut cfg = RunConfig::load(cfg_path)?;
        apply_rank_flags(&mut cfg.ranking, &a);
        let code = match (&a.country, cfg.countries.as_slice()) {
            (Some(c), _) => c.clone(),
            (None, [only]) => only.code.clone(),
            _ => bail!(wikiflu::Error::InvalidArgument("--country is required with several countries".into())),
        };
        let mut country = cfg.country(&code)?.clone();
        if let Some(g) = &a.graph {
            country.graph = std::env::current_dir()?.join(g);
        }
        if let Some(r) = &a.reference {
            country.reference = r.clone();
        }
        let out = a.out.clone().unwrap_or_else(|| ranking_path(&cfg.output_path(), &code, a.method));
        stage_rank(&cfg, &country, a.method, &out)?;
        println!("{}", out.display());
        return Ok(());
    }
    let (Some(graph), Some(out)) = (&a.graph, &a.out) else {
        bail!(wikiflu::Error::InvalidArgument("rank needs --graph and --out, or --config".into()));
    };
    let reference = a.reference.clone().unwrap_or_else(|| "Influenza".into());
    let mut rc = RankingConfig::default();
    apply_rank_flags(&mut rc, &a);
    let g = load_graph(graph)?;
    let r = rank_graph(&g, a.method, &reference, &rc)?;
    let params = serde_json::to_vec(&(a.method, &reference, &rc))?;
    write_ranking_csv(out, &r, Some(&OutputMeta::new(short_hash(&params))))?;
    Ok(())
}

fn apply_rank_flags(rc: &mut RankingConfig, a: &RankArgs) {
    if let Some(k) = a.k {
        rc.max_cycle_length = k;
    }
    if let Some(s) = a.scoring {
        rc.scoring = s;
    }
    if let Some(d) = a.damping {
        rc.damping = d;
    }
}

fn cell_of(a: &CellArgs) -> CellId {
    CellId {
        country: a.country.clone(),
        method: a.method,
        dataset: a.dataset,
    }
}

/// The cell's feature list, creating it (and its ranking) when absent.
fn ensure_features(cfg: &RunConfig, a: &CellArgs) -> Result<PathBuf> {
    if let Some(f) = &a.features {
        return Ok(f.clone());
    }
    let out = cfg.output_path();
    let path = features_path(&out, &a.country, a.method);
    if !path.is_file() {
        let country = cfg.country(&a.country)?;
        let ranking = if a.method == FeatureMethod::Categories {
            None
        } else {
            let r = ranking_path(&out, &a.country, a.method);
            if !r.is_file() {
                stage_rank(cfg, country, a.method, &r)?;
            }
            Some(r)
        };
        stage_features(cfg, country, a.method, ranking.as_deref(), &path)?;
    }
    Ok(path)
}

fn build_matrix_cmd(a: CellArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let features = ensure_features(&cfg, &a)?;
    let country = cfg.country(&a.country)?;
    let list = FeatureList::read(&features, a.method, &country.language)?;
    let inc = load_incidence_csv(cfg.resolve(&country.incidence))?;
    let seasons = evaluation_seasons(&cfg, country, &inc, a.dataset)?;
    let aligned = align(&inc, &seasons)?;
    let series = load_dataset(&cfg, country, a.dataset)?;
    let all: Vec<usize> = (0..aligned.len()).collect();
    let (matrix, missing) = build_matrix(&list, &series, &aligned.rows, &all)?;
    if !missing.is_empty() {
        log::warn!("{} feature pages have no series", missing.len());
    }
    let cell = cell_of(&a);
    let out = a.out.clone().unwrap_or_else(|| cell.dir(&cfg.output_path()).join("matrix.csv"));
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    matrix.write_csv(&out, Some(&cfg.meta()))?;
    matrix.scaler.write_json(out.with_extension("scaler.json"))?;
    println!("{}", out.display());
    Ok(())
}

fn train_cmd(a: CellArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let features = ensure_features(&cfg, &a)?;
    let cell = cell_of(&a);
    let dir = a.dir.clone().unwrap_or_else(|| cell.dir(&cfg.output_path()));
    let file = stage_train(&cfg, &cell, &features, &dir)?;
    info!("{cell}: trained {} season models", file.folds.len());
    println!("{}", dir.display());
    Ok(())
}

fn evaluate_cmd(a: CellArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let cell = cell_of(&a);
    let dir = a.dir.clone().unwrap_or_else(|| cell.dir(&cfg.output_path()));
    let r = stage_evaluate(&cfg, &cell, &dir)?;
    println!("{cell}: mean PCC {:.3}, peaks {}", r.mean_pcc, r.peaks);
    Ok(())
}

fn analyze_cmd(a: ConfigArgs) -> Result<()> {
    let cfg = load_config(&a)?;
    let out = cfg.output_path();
    let cells: Vec<CellId> = grid(&cfg)
        .into_iter()
        .filter(|c| c.dir(&out).join("models.json").is_file())
        .collect();
    if cells.is_empty() {
        bail!(wikiflu::Error::Data(format!("no trained cells under {}", out.display())));
    }
    stage_analyze(&cfg, &cells)?;
    println!("{}", out.join("feature_analysis.md").display());
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let scenario = SynthScenario {
        seasons: a.seasons,
        pages: a.pages,
        signal_pages: a.signal_pages,
        noise_std: a.noise_std,
        spike_rate: a.spike_rate,
        seed: a.seed,
        first_season: a.first_season,
        country: a.country,
        ..SynthScenario::default()
    };
    let data = generate(&scenario)?;
    let hash = short_hash(&serde_json::to_vec(&scenario)?);
    let paths = data.write(&a.out, Some(&OutputMeta::new(hash)))?;
    let cfg = RunConfig::for_synth(&scenario, &paths);
    let run = a.out.join("run.toml");
    write_file(&run, &cfg.to_toml()?)?;
    println!("{}", run.display());
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run_all_cmd(a: RunAllArgs) -> Result<u8> {
    let cfg = load_config(&a.config)?;
    let summary = run_all(&cfg, a.jobs)?;
    let out = cfg.output_path();
    for c in &summary.cells {
        match (&c.report, &c.error) {
            (Some(r), _) => println!("{}: mean PCC {:.3}, peaks {}", c.cell, r.mean_pcc, r.peaks),
            (_, Some(e)) => println!("{}: FAILED {e}", c.cell),
            _ => {}
        }
    }
    println!("{}", out.join("report.md").display());
    Ok(if summary.failed() > 0 { EXIT_PARTIAL } else { 0 })
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<wikiflu::Error>() {
        Some(w) if w.is_data_error() => EXIT_DATA,
        Some(_) => EXIT_USAGE,
        None if e.downcast_ref::<std::io::Error>().is_some() => EXIT_DATA,
        None => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Ingest(IngestCmd::Dumps(a)) => ingest_dumps(a).map(|_| 0),
        Command::Ingest(IngestCmd::Merge(a)) => ingest_merge(a).map(|_| 0),
        Command::Rank(a) => rank(a).map(|_| 0),
        Command::BuildMatrix(a) => build_matrix_cmd(a).map(|_| 0),
        Command::Train(a) => train_cmd(a).map(|_| 0),
        Command::Evaluate(a) => evaluate_cmd(a).map(|_| 0),
        Command::AnalyzeFeatures(a) => analyze_cmd(a).map(|_| 0),
        Command::Synth(a) => synth_cmd(a).map(|_| 0),
        Command::RunAll(a) => run_all_cmd(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}

