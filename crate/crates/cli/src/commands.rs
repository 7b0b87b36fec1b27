//! Subcommands. Each wraps one pipeline stage with file-based input and
//! output; JSON summaries go to stdout unless `--out` names a file.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use mvdist_core::epochs::{mean_only_normalize, normalize_positions, normalize_time_series};
use mvdist_core::fitting::{fit_epoch, fit_interval, tail_exponent};
use mvdist_core::io::{self, Sidecar};
use mvdist_core::ingest::QuoteSchema;
use mvdist_core::rotate::rotate_returns;
use mvdist_core::spectra::{self, eigendecompose, ledoit_wolf, CorrelationMatrix};
use mvdist_core::studies::{epoch_length_study, epoch_vs_interval_overlay, overnight_study, shrinkage_study, PairSampling};
use mvdist_core::{stats, BinningRule, Error, Family, FitConfig, FitResult, ReturnPanel, Scale};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::{EnsembleName, KernelName, RunConfig, Structure, SyntheticSource};
use crate::error::{CliResult, Stage, StageError};
use crate::ops::{self, num};
use crate::pipeline::{self, load_source};

#[derive(Debug, Parser)]
#[command(name = "mvdist", version, about = "Eigenbasis aggregation and heavy-tailed fits of return panels")]
pub struct Cli {
    /// Worker threads; defaults to the run config's value or all cores.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Resample quote files (or load daily closes) onto a price grid.
    Ingest(IngestArgs),
    /// Log returns of a price grid.
    Returns(ReturnsArgs),
    /// Correlation or covariance matrix of a panel slice, with its spectrum.
    Correlate(CorrelateArgs),
    /// Rotate a panel slice into its own eigenbasis.
    Rotate(RotateArgs),
    /// Rotated, rescaled and pooled returns, with their density.
    Aggregate(AggregateArgs),
    /// Fit the algebraic epoch kernel to a density.
    FitEpoch(FitEpochArgs),
    /// Fit a long-interval family to a density.
    FitInterval(FitIntervalArgs),
    /// Power-law slopes of both tails.
    Tails(TailsArgs),
    /// Pools with and without day-boundary returns.
    StudyOvernight(StudyOvernightArgs),
    /// Normalization artifacts across epoch lengths.
    StudyEpochLength(StudyEpochLengthArgs),
    /// Raw versus shrunk correlation matrices, epoch by epoch.
    StudyShrinkage(StudyShrinkageArgs),
    /// Compare epoch model curves with an interval model curve.
    StudyOverlay(StudyOverlayArgs),
    /// Draw a synthetic panel with fluctuating epoch correlations.
    Synth(SynthArgs),
    /// Run the whole pipeline from a config file.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Quote CSV files (`timestamp,ticker,bid,ask`).
    #[arg(long, num_args = 1.., conflicts_with = "daily", required_unless_present = "daily")]
    pub quotes: Vec<PathBuf>,
    /// Daily CSV (`date,ticker,adj_close`).
    #[arg(long)]
    pub daily: Option<PathBuf>,
    /// Trading calendar TOML.
    #[arg(long, required_unless_present = "daily")]
    pub calendar: Option<PathBuf>,
    /// Grid spacing in seconds.
    #[arg(long, default_value_t = 1)]
    pub dt: u32,
    /// Date for clock-only timestamps.
    #[arg(long)]
    pub date: Option<NaiveDate>,
    /// Output container stem.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReturnsArgs {
    #[arg(long)]
    pub grid: PathBuf,
    /// Keep returns across day boundaries (flagged).
    #[arg(long)]
    pub overnight: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MatrixChoice {
    Time,
    Position,
    Covariance,
    Shrunk,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    #[arg(long)]
    pub panel: PathBuf,
    /// Column range `START:END`; defaults to the whole panel.
    #[arg(long)]
    pub columns: Option<String>,
    #[arg(long, value_enum, default_value = "time")]
    pub kind: MatrixChoice,
    /// Fixed shrinkage intensity for `--kind shrunk`.
    #[arg(long)]
    pub intensity: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RotateArgs {
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long)]
    pub columns: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long)]
    pub columns: Option<String>,
    /// Normalize epochs of this many columns separately and concatenate.
    #[arg(long, conflicts_with = "native_epochs")]
    pub epoch_len: Option<usize>,
    /// Like `--epoch-len`, using the panel's own epochs.
    #[arg(long)]
    pub native_epochs: bool,
    /// Aggregate every ticker pair in its own 2×2 eigenbasis.
    #[arg(long)]
    pub pairwise: bool,
    /// Seed for pair subsampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "symmetric:50:201")]
    pub binning: String,
    #[arg(long)]
    pub density: PathBuf,
    /// Also write the pooled values, one per line.
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub density: PathBuf,
    #[arg(long, default_value = "log")]
    pub scale: Scale,
    /// TOML file with fit bounds.
    #[arg(long)]
    pub fit_config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitEpochArgs {
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct FitIntervalArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub family: Family,
    /// Kernel shape held fixed for AG and AA.
    #[arg(long)]
    pub l: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TailsArgs {
    /// Sample file, one value per line.
    #[arg(long)]
    pub samples: PathBuf,
    /// Lower and upper quantile of |x| bounding the tail region.
    #[arg(long, default_value = "0.95,0.999")]
    pub quantiles: String,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StudyOvernightArgs {
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long, default_value = "symmetric:50:201")]
    pub binning: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StudyEpochLengthArgs {
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long, default_value = "10,25,55")]
    pub lengths: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "symmetric:50:201")]
    pub binning: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StudyShrinkageArgs {
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long)]
    pub epoch_len: usize,
    /// Fixed intensity instead of the estimate.
    #[arg(long)]
    pub intensity: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StudyOverlayArgs {
    /// JSON list of epoch fits.
    #[arg(long)]
    pub epoch_fits: PathBuf,
    /// JSON interval fit.
    #[arg(long)]
    pub interval_fit: PathBuf,
    /// Comma-separated abscissas.
    #[arg(long, default_value = "0,1,2,3,4,5,6,7,8,9,10")]
    pub grid: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV of the curves on the grid.
    #[arg(long)]
    pub curves: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub epochs: usize,
    #[arg(long)]
    pub epoch_len: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub kernel: KernelChoice,
    #[arg(long)]
    pub l: Option<f64>,
    #[arg(long, value_enum, default_value = "none")]
    pub ensemble: EnsembleChoice,
    #[arg(long = "N")]
    pub n: Option<f64>,
    #[arg(long = "L")]
    pub big_l: Option<f64>,
    /// Equicorrelation of the mean matrix; 0 gives the identity.
    #[arg(long, default_value_t = 0.3)]
    pub rho: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KernelChoice {
    Gaussian,
    Algebraic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EnsembleChoice {
    None,
    Gaussian,
    Algebraic,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(p) => ops::write_json(p, value).stage("write"),
        None => {
            println!("{}", serde_json::to_string_pretty(value).stage("write")?);
            Ok(())
        }
    }
}

fn sibling(stem: &Path, suffix: &str) -> PathBuf {
    let name = stem.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    stem.with_file_name(format!("{name}{suffix}"))
}

fn read_panel(stem: &Path, columns: Option<&str>) -> CliResult<ReturnPanel> {
    let panel = io::read_panel(stem).stage("read-panel")?;
    match columns {
        None => Ok(panel),
        Some(c) => {
            let r = ops::parse_range(c).stage("read-panel")?;
            panel.slice(r).stage("read-panel")
        }
    }
}

fn fit_config(path: Option<&Path>) -> CliResult<FitConfig> {
    match path {
        None => Ok(FitConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).stage("fit-config")?;
            toml::from_str(&text).map_err(|e| StageError::config("fit-config", e.to_string()))
        }
    }
}

fn binning(s: &str) -> CliResult<BinningRule> {
    ops::parse_binning(s).stage("binning")
}

fn write_spectrum(path: &Path, eigenvalues: &[f64]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).stage("write")?;
    w.write_record(["index", "eigenvalue"]).stage("write")?;
    for (i, v) in eigenvalues.iter().enumerate() {
        w.write_record([(i + 1).to_string(), num(*v)]).stage("write")?;
    }
    w.flush().stage("write")
}

fn sidecar(labels: Vec<String>, m: &DMatrix<f64>, mode: &str, panel: &ReturnPanel) -> Sidecar {
    Sidecar {
        format: io::FORMAT.into(),
        rows: m.nrows(),
        cols: m.ncols(),
        labels,
        mode: mode.into(),
        horizon: Some(panel.horizon),
        epochs: Vec::new(),
        boundary: Vec::new(),
        origin: panel.origin.clone(),
        offset: panel.offset,
        times: Vec::new(),
    }
}

fn direction_labels(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("v{i:03}")).collect()
}

pub fn ingest(a: &IngestArgs) -> CliResult<()> {
    let (grid, summary) = match &a.daily {
        Some(d) => ops::ingest_daily(d),
        None => {
            let cal = a.calendar.as_deref().expect("clap requires a calendar");
            ops::ingest_quotes(&a.quotes, &QuoteSchema::default(), a.date, cal, a.dt)
        }
    }
    .stage("ingest")?;
    ops::ensure_parent(&a.out).stage("write")?;
    io::write_grid(&a.out, &grid).stage("write")?;
    emit(&summary, None)
}

pub fn returns(a: &ReturnsArgs) -> CliResult<()> {
    let grid = io::read_grid(&a.grid).stage("read-grid")?;
    let (panel, _) = ops::returns_with_labels(&grid, a.overnight).stage("returns")?;
    ops::ensure_parent(&a.out).stage("write")?;
    io::write_panel(&a.out, &panel).stage("write")?;
    emit(
        &serde_json::json!({
            "tickers": panel.k(),
            "columns": panel.t(),
            "epochs": panel.epochs.len(),
            "boundary_returns": panel.boundary.iter().filter(|b| **b).count(),
        }),
        None,
    )
}

pub fn correlate(a: &CorrelateArgs) -> CliResult<()> {
    let panel = read_panel(&a.panel, a.columns.as_deref())?;
    let st = "correlate";
    let (matrix, intensity): (CorrelationMatrix, Option<f64>) = match a.kind {
        MatrixChoice::Time => (spectra::time_correlation(&normalize_time_series(&panel).stage(st)?).stage(st)?, None),
        MatrixChoice::Position => (spectra::position_correlation(&normalize_positions(&panel).stage(st)?).stage(st)?, None),
        MatrixChoice::Covariance => (spectra::covariance(&mean_only_normalize(&panel)).stage(st)?, None),
        MatrixChoice::Shrunk => {
            let s = ledoit_wolf(&mean_only_normalize(&panel), a.intensity).stage(st)?;
            (s.correlation().stage(st)?, Some(s.intensity))
        }
    };
    let spec = eigendecompose(&matrix).stage(st)?;
    let labels = match a.kind {
        MatrixChoice::Position => (0..matrix.dim()).map(|c| c.to_string()).collect(),
        _ => panel.tickers.clone(),
    };
    let mode = format!("matrix-{:?}", a.kind).to_lowercase();
    ops::ensure_parent(&a.out).stage("write")?;
    io::write_matrix(&a.out, &matrix.values, &sidecar(labels, &matrix.values, &mode, &panel)).stage("write")?;
    let vectors = sidecar(direction_labels(spec.dim()), &spec.eigenvectors, "eigenvectors", &panel);
    io::write_matrix(&sibling(&a.out, "-eigenvectors"), &spec.eigenvectors, &vectors).stage("write")?;
    let values: Vec<f64> = spec.eigenvalues.iter().copied().collect();
    write_spectrum(&sibling(&a.out, "-eigenvalues.csv"), &values)?;
    emit(
        &serde_json::json!({
            "dim": spec.dim(),
            "full_rank": spec.full_rank,
            "min_eigenvalue": values[0],
            "max_eigenvalue": values[values.len() - 1],
            "intensity": intensity,
        }),
        None,
    )
}

#[derive(Serialize)]
struct Direction {
    index: usize,
    eigenvalue: f64,
    rescaled_variance: f64,
    excess_kurtosis: Option<f64>,
}

pub fn rotate(a: &RotateArgs) -> CliResult<()> {
    let panel = read_panel(&a.panel, a.columns.as_deref())?;
    let st = "rotate";
    let normalized = normalize_time_series(&panel).stage(st)?;
    let spec = eigendecompose(&spectra::time_correlation(&normalized).stage(st)?).stage(st)?;
    let rot = rotate_returns(&normalized, &spec).stage(st)?;
    let labels = direction_labels(rot.k());
    ops::ensure_parent(&a.out).stage("write")?;
    for (suffix, m, mode) in [("-rotated", &rot.rotated, "rotated"), ("-rescaled", &rot.rescaled, "rescaled")] {
        io::write_matrix(&sibling(&a.out, suffix), m, &sidecar(labels.clone(), m, mode, &panel)).stage("write")?;
    }
    write_spectrum(&sibling(&a.out, "-eigenvalues.csv"), &rot.eigenvalues)?;
    let dirs: Vec<Direction> = (0..rot.k())
        .map(|k| {
            let row: Vec<f64> = rot.rescaled.row(k).iter().copied().collect();
            Direction {
                index: k + 1,
                eigenvalue: rot.eigenvalues[k],
                rescaled_variance: stats::second_moment(&row),
                excess_kurtosis: stats::excess_kurtosis(&row).ok(),
            }
        })
        .collect();
    emit(&dirs, None)
}

pub fn aggregate(a: &AggregateArgs) -> CliResult<()> {
    let panel = read_panel(&a.panel, a.columns.as_deref())?;
    let all = 0..panel.t();
    let epochs = match (a.epoch_len, a.native_epochs) {
        (Some(len), _) => Some(ops::fixed_epochs(all.clone(), len)),
        (None, true) => Some(ops::native_epochs(&panel, &all)),
        (None, false) => None,
    };
    let st = "aggregate";
    let pool = match (epochs, a.pairwise) {
        (None, false) => ops::epoch_pool(&panel, all),
        (Some(e), false) => ops::interval_pool(&panel, &e),
        (e, true) => {
            let sampling = PairSampling {
                seed: a.seed,
                ..PairSampling::default()
            };
            ops::pairwise_pool(&panel, &e.unwrap_or_else(|| vec![all]), &sampling)
        }
    }
    .stage(st)?;
    let label = a.density.file_stem().and_then(|s| s.to_str()).unwrap_or("aggregate");
    let d = ops::density(&pool, &binning(&a.binning)?, label).stage(st)?;
    ops::write_density(&a.density, &d).stage("write")?;
    if let Some(p) = &a.samples {
        ops::write_samples(p, &pool).stage("write")?;
    }
    emit(
        &serde_json::json!({
            "samples": pool.len(),
            "second_moment": stats::second_moment(&pool),
            "excess_kurtosis": stats::excess_kurtosis(&pool).ok(),
        }),
        None,
    )
}

pub fn fit_epoch_cmd(a: &FitEpochArgs) -> CliResult<()> {
    let d = ops::read_density(&a.fit.density).stage("read-density")?;
    let cfg = fit_config(a.fit.fit_config.as_deref())?;
    let fit = fit_epoch(&d, a.fit.scale, &cfg).stage("fit-epoch")?;
    emit(&fit, a.fit.out.as_deref())
}

pub fn fit_interval_cmd(a: &FitIntervalArgs) -> CliResult<()> {
    let d = ops::read_density(&a.fit.density).stage("read-density")?;
    let cfg = fit_config(a.fit.fit_config.as_deref())?;
    let fit = fit_interval(&d, a.family, a.l, a.fit.scale, &cfg).stage("fit-interval")?;
    emit(&fit, a.fit.out.as_deref())
}

pub fn tails(a: &TailsArgs) -> CliResult<()> {
    let q: Vec<f64> = ops::parse_list(&a.quantiles, "quantile").stage("tails")?;
    let [lo, hi] = q[..] else {
        return Err(StageError::config("tails", "--quantiles takes exactly two values"));
    };
    let samples = ops::read_samples(&a.samples).stage("read-samples")?;
    let fit = tail_exponent(&samples, (lo, hi), a.bins).stage("tails")?;
    emit(&fit, a.out.as_deref())
}

pub fn study_overnight(a: &StudyOvernightArgs) -> CliResult<()> {
    let panel = read_panel(&a.panel, None)?;
    let rep = overnight_study(&panel, &binning(&a.binning)?).stage("study-overnight")?;
    ops::write_json(&a.out.join("overnight.json"), &rep).stage("write")?;
    for d in &rep.densities {
        let name = d.label.replace(',', "_");
        ops::write_density(&a.out.join(format!("{name}.csv")), d).stage("write")?;
    }
    emit(&rep, None)
}

pub fn study_epoch_length(a: &StudyEpochLengthArgs) -> CliResult<()> {
    let panel = read_panel(&a.panel, None)?;
    let lengths: Vec<usize> = ops::parse_list(&a.lengths, "length").stage("study-epoch-length")?;
    let sampling = PairSampling {
        seed: a.seed,
        ..PairSampling::default()
    };
    let rep = epoch_length_study(&panel, &lengths, &binning(&a.binning)?, &sampling).stage("study-epoch-length")?;
    ops::write_json(&a.out.join("epoch_length.json"), &rep).stage("write")?;
    for d in &rep.densities {
        let name = d.label.replace([',', '='], "_");
        ops::write_density(&a.out.join(format!("{name}.csv")), d).stage("write")?;
    }
    emit(&rep, None)
}

pub fn study_shrinkage(a: &StudyShrinkageArgs) -> CliResult<()> {
    let panel = read_panel(&a.panel, None)?;
    let rep = shrinkage_study(&panel, a.epoch_len, a.intensity).stage("study-shrinkage")?;
    emit(&rep, a.out.as_deref())
}

/// Accepts a bare fit or a pipeline record `{ "fit": … }`.
fn fit_value(v: serde_json::Value) -> mvdist_core::Result<FitResult> {
    let v = match v {
        serde_json::Value::Object(mut m) if m.contains_key("fit") => m.remove("fit").expect("checked"),
        other => other,
    };
    Ok(serde_json::from_value(v)?)
}

pub fn study_overlay(a: &StudyOverlayArgs) -> CliResult<()> {
    let st = "study-overlay";
    let epochs: Vec<serde_json::Value> = ops::read_json(&a.epoch_fits).stage(st)?;
    let epochs: Vec<FitResult> = epochs.into_iter().map(fit_value).collect::<mvdist_core::Result<_>>().stage(st)?;
    let interval = fit_value(ops::read_json(&a.interval_fit).stage(st)?).stage(st)?;
    let grid: Vec<f64> = ops::parse_list(&a.grid, "grid").stage(st)?;
    let rep = epoch_vs_interval_overlay(&epochs, &interval, &grid).stage(st)?;
    if let Some(p) = &a.curves {
        ops::ensure_parent(p).stage("write")?;
        let mut w = csv::Writer::from_path(p).stage("write")?;
        let mut header = vec!["x".to_string(), "interval".to_string()];
        header.extend((1..=rep.epoch_curves.len()).map(|i| format!("epoch_{i}")));
        w.write_record(&header).stage("write")?;
        for (i, x) in rep.grid.iter().enumerate() {
            let mut row = vec![num(*x), num(rep.interval_curve[i])];
            row.extend(rep.epoch_curves.iter().map(|c| num(c[i])));
            w.write_record(&row).stage("write")?;
        }
        w.flush().stage("write")?;
    }
    emit(&rep.points, a.out.as_deref())
}

pub fn synth_source(a: &SynthArgs) -> SyntheticSource {
    SyntheticSource {
        k: a.k,
        epochs: a.epochs,
        epoch_len: a.epoch_len,
        kernel: match a.kernel {
            KernelChoice::Gaussian => KernelName::Gaussian,
            KernelChoice::Algebraic => KernelName::Algebraic,
        },
        l: a.l,
        ensemble: match a.ensemble {
            EnsembleChoice::None => EnsembleName::None,
            EnsembleChoice::Gaussian => EnsembleName::Gaussian,
            EnsembleChoice::Algebraic => EnsembleName::Algebraic,
        },
        n: a.n,
        big_l: a.big_l,
        correlation: if a.rho == 0.0 {
            Structure::Identity
        } else {
            Structure::OneFactor { rho: a.rho }
        },
    }
}

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    let cfg = RunConfig {
        seed: Some(a.seed),
        output: PathBuf::new(),
        workers: None,
        source: crate::config::Source::Synthetic(synth_source(a)),
        epochs: Default::default(),
        binning: Default::default(),
        fit: Default::default(),
        studies: Default::default(),
    };
    cfg.validate().stage("config")?;
    let loaded = load_source(&cfg).stage("synth")?;
    ops::ensure_parent(&a.out).stage("write")?;
    io::write_panel(&a.out, &loaded.panel).stage("write")?;
    emit(
        &serde_json::json!({ "tickers": loaded.panel.k(), "columns": loaded.panel.t(), "epochs": loaded.panel.epochs.len() }),
        None,
    )
}

/// Output directory: flag, else config; relative paths go under `MVDIST_OUT`.
pub fn output_dir(flag: Option<&Path>, cfg: &RunConfig, env_root: Option<&Path>) -> PathBuf {
    let out = flag.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.clone());
    match env_root {
        Some(root) if out.is_relative() => root.join(out),
        _ => out,
    }
}

pub fn load_run_config(a: &RunArgs) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&a.config).stage("config")?;
    if a.seed.is_some() {
        cfg.seed = a.seed;
    }
    Ok(cfg)
}

pub fn run(a: &RunArgs, cfg: &RunConfig) -> CliResult<()> {
    let root = std::env::var_os("MVDIST_OUT").map(PathBuf::from);
    let out = output_dir(a.out.as_deref(), cfg, root.as_deref());
    let manifest = pipeline::run_pipeline(cfg, &out)?;
    println!(
        "wrote {} artifacts to {} (config sha256 {})",
        manifest.files.len(),
        out.display(),
        manifest.config_sha256
    );
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error in {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let run_cfg = match &cli.command {
        Command::Run(a) => Some(load_run_config(a)?),
        _ => None,
    };
    let workers = cli.workers.or(run_cfg.as_ref().and_then(|c| c.workers));
    if workers == Some(0) {
        return Err(StageError::config("workers", "--workers must be positive"));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| StageError::new("workers", Error::Config(e.to_string())))?;
    pool.install(|| match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Returns(a) => returns(a),
        Command::Correlate(a) => correlate(a),
        Command::Rotate(a) => rotate(a),
        Command::Aggregate(a) => aggregate(a),
        Command::FitEpoch(a) => fit_epoch_cmd(a),
        Command::FitInterval(a) => fit_interval_cmd(a),
        Command::Tails(a) => tails(a),
        Command::StudyOvernight(a) => study_overnight(a),
        Command::StudyEpochLength(a) => study_epoch_length(a),
        Command::StudyShrinkage(a) => study_shrinkage(a),
        Command::StudyOverlay(a) => study_overlay(a),
        Command::Synth(a) => synth(a),
        Command::Run(a) => run(a, run_cfg.as_ref().expect("loaded above")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn output_dir_precedence() {
        let cfg = RunConfig::from_toml("seed = 1\noutput = \"res\"\n[source]\nkind = \"daily\"\nfile = \"x.csv\"\n").unwrap();
        assert_eq!(output_dir(None, &cfg, None), PathBuf::from("res"));
        assert_eq!(output_dir(None, &cfg, Some(Path::new("/r"))), PathBuf::from("/r/res"));
        assert_eq!(output_dir(Some(Path::new("/abs")), &cfg, Some(Path::new("/r"))), PathBuf::from("/abs"));
    }
}
