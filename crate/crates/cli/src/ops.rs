//! Building blocks shared by the subcommands and the pipeline, so that a
//! composed run and a stagewise run execute the same code.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use mvdist_core::density::estimate_density;
use mvdist_core::epochs::{concatenate_epochs, normalize_time_series};
use mvdist_core::ingest::{build_midpoints, log_returns, parse_quotes, resample_grid, PriceGrid, QuoteSchema, TradingCalendar};
use mvdist_core::studies::{aggregate_slice, pairwise_aggregate, PairSampling};
use mvdist_core::{BinningRule, EmpiricalDensity, Error, NormalizedPanel, Result, ReturnPanel};
use rayon::prelude::*;
use serde::Serialize;

/// Shortest round-trip form, used for every float in text artifacts.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn write_density(path: &Path, d: &EmpiricalDensity) -> Result<()> {
    ensure_parent(path)?;
    d.write_csv(BufWriter::new(File::create(path)?))
}

pub fn read_density(path: &Path) -> Result<EmpiricalDensity> {
    let label = path.file_stem().and_then(|s| s.to_str()).unwrap_or("density");
    EmpiricalDensity::read_csv(File::open(path)?, label)
}

/// One value per line.
pub fn write_samples(path: &Path, values: &[f64]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = BufWriter::new(File::create(path)?);
    for v in values {
        writeln!(w, "{}", num(*v))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        out.push(
            s.parse()
                .map_err(|_| Error::Data(format!("{} line {}: not a number: {s:?}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

/// `rule:args` with rules `symmetric:CAP:BINS`, `uniform:LO:HI:BINS` and
/// `fd:LO:HI` (Freedman–Diaconis).
pub fn parse_binning(s: &str) -> Result<BinningRule> {
    let parts: Vec<&str> = s.split(':').collect();
    let f = |i: usize| -> Result<f64> {
        parts
            .get(i)
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| Error::Config(format!("bad binning spec {s:?}")))
    };
    let n = |i: usize| -> Result<usize> {
        parts
            .get(i)
            .and_then(|p| p.parse().ok())
            .ok_or_else(|| Error::Config(format!("bad binning spec {s:?}")))
    };
    let rule = match (parts[0], parts.len()) {
        ("symmetric", 3) => BinningRule::Symmetric { cap: f(1)?, bins: n(2)? },
        ("uniform", 4) => BinningRule::Uniform {
            lo: f(1)?,
            hi: f(2)?,
            bins: n(3)?,
        },
        ("fd", 3) => BinningRule::FreedmanDiaconis { lo: f(1)?, hi: f(2)? },
        _ => return Err(Error::Config(format!("bad binning spec {s:?}"))),
    };
    Ok(rule)
}

/// `START:END`, half-open.
pub fn parse_range(s: &str) -> Result<Range<usize>> {
    let bad = || Error::Config(format!("bad column range {s:?}, expected START:END"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let (a, b): (usize, usize) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
    if a >= b {
        return Err(bad());
    }
    Ok(a..b)
}

pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad {what} list {s:?}")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSummary {
    pub tickers: usize,
    pub grid_points: usize,
    pub days: usize,
    pub malformed: usize,
    pub rejected: usize,
    pub dropped: Vec<(String, String)>,
}

/// Quote files to a previous-tick price grid.
pub fn ingest_quotes(
    files: &[impl AsRef<Path>],
    schema: &QuoteSchema,
    date: Option<NaiveDate>,
    calendar: &Path,
    dt: u32,
) -> Result<(PriceGrid, IngestSummary)> {
    let cal = TradingCalendar::from_toml(&fs::read_to_string(calendar)?)?;
    let parsed = files
        .iter()
        .map(|f| parse_quotes(File::open(f.as_ref())?, schema, date))
        .collect::<Result<Vec<_>>>()?;
    let (malformed, rejected) = parsed.iter().fold((0, 0), |a, p| (a.0 + p.malformed, a.1 + p.rejected));
    let ticks: Vec<_> = parsed.into_iter().flat_map(|p| p.ticks).collect();
    let build = resample_grid(&build_midpoints(&ticks), &cal, dt)?;
    let summary = IngestSummary {
        tickers: build.grid.tickers.len(),
        grid_points: build.grid.times.len(),
        days: build.grid.days.len(),
        malformed,
        rejected,
        dropped: build.dropped,
    };
    Ok((build.grid, summary))
}

pub fn ingest_daily(file: &Path) -> Result<(PriceGrid, IngestSummary)> {
    let load = mvdist_core::ingest::load_daily_panel(File::open(file)?)?;
    let summary = IngestSummary {
        tickers: load.grid.tickers.len(),
        grid_points: load.grid.times.len(),
        days: load.grid.times.len(),
        malformed: 0,
        rejected: load.duplicates,
        dropped: load.dropped,
    };
    Ok((load.grid, summary))
}

/// Returns panel and one label per native epoch (its date for clocked data).
pub fn returns_with_labels(grid: &PriceGrid, include_overnight: bool) -> Result<(ReturnPanel, Vec<String>)> {
    let panel = log_returns(grid, include_overnight)?;
    let labels = if grid.days.len() == panel.epochs.len() {
        grid.days.iter().map(|d| grid.times[d.start].date().to_string()).collect()
    } else {
        epoch_labels(panel.epochs.len())
    };
    Ok((panel, labels))
}

pub fn epoch_labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("epoch {i}")).collect()
}

/// Normalizes one column range on its own and aggregates it in its own
/// eigenbasis.
pub fn epoch_pool(panel: &ReturnPanel, columns: Range<usize>) -> Result<Vec<f64>> {
    aggregate_slice(&normalize_time_series(&panel.slice(columns)?)?)
}

/// Normalizes each epoch separately, concatenates, and aggregates in the
/// eigenbasis of the concatenation.
pub fn interval_pool(panel: &ReturnPanel, epochs: &[Range<usize>]) -> Result<Vec<f64>> {
    aggregate_slice(&concatenated(panel, epochs)?)
}

pub fn concatenated(panel: &ReturnPanel, epochs: &[Range<usize>]) -> Result<NormalizedPanel> {
    let parts = epochs
        .par_iter()
        .map(|r| normalize_time_series(&panel.slice(r.clone())?))
        .collect::<Result<Vec<_>>>()?;
    concatenate_epochs(&parts)
}

/// 2×2 aggregation of each epoch, pooled in epoch order.
pub fn pairwise_pool(panel: &ReturnPanel, epochs: &[Range<usize>], sampling: &PairSampling) -> Result<Vec<f64>> {
    Ok(epochs
        .par_iter()
        .enumerate()
        .map(|(e, r)| pairwise_aggregate(&normalize_time_series(&panel.slice(r.clone())?)?, sampling, e as u64).map(|p| p.values))
        .collect::<Result<Vec<_>>>()?
        .concat())
}

pub fn density(samples: &[f64], rule: &BinningRule, label: &str) -> Result<EmpiricalDensity> {
    estimate_density(samples, rule, label)
}

/// Splits `range` into consecutive epochs of `len` columns; a short tail is
/// dropped.
pub fn fixed_epochs(range: Range<usize>, len: usize) -> Vec<Range<usize>> {
    let n = range.len() / len.max(1);
    (0..n).map(|e| range.start + e * len..range.start + (e + 1) * len).collect()
}

/// Native epochs of `panel` that lie inside `range`.
pub fn native_epochs(panel: &ReturnPanel, range: &Range<usize>) -> Vec<Range<usize>> {
    panel
        .epochs
        .iter()
        .filter(|r| r.start >= range.start && r.end <= range.end)
        .cloned()
        .collect()
}
