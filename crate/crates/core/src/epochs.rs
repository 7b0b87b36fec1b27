//! Return panels, epoch partitioning and the two normalizations.

use std::fmt;
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Return horizon of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "unit", content = "value", rename_all = "lowercase")]
pub enum Horizon {
    Seconds(u32),
    Days(u32),
    /// Synthetic data without a physical clock.
    Steps(u32),
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Horizon::Seconds(s) => write!(f, "{s} s"),
            Horizon::Days(d) => write!(f, "{d} d"),
            Horizon::Steps(n) => write!(f, "{n} step"),
        }
    }
}

/// Identifies which columns of which source a panel or matrix came from.
/// Rotation refuses to mix data and bases with different ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SliceId {
    pub origin: String,
    pub ranges: Vec<Range<usize>>,
}

impl SliceId {
    pub fn new(origin: impl Into<String>, range: Range<usize>) -> Self {
        Self {
            origin: origin.into(),
            ranges: vec![range],
        }
    }

    /// Joins ids in order, merging adjacent ranges.
    pub fn join(parts: &[&SliceId]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Insufficient("nothing to join".into()))?;
        let mut ranges: Vec<Range<usize>> = Vec::new();
        for p in parts {
            if p.origin != first.origin {
                return Err(Error::Data(format!(
                    "cannot join slices of {} and {}",
                    first.origin, p.origin
                )));
            }
            for r in &p.ranges {
                match ranges.last_mut() {
                    Some(last) if last.end == r.start => last.end = r.end,
                    _ => ranges.push(r.clone()),
                }
            }
        }
        Ok(Self {
            origin: first.origin.clone(),
            ranges,
        })
    }
}

impl fmt::Display for SliceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.origin)?;
        for r in &self.ranges {
            write!(f, "[{}..{})", r.start, r.end)?;
        }
        Ok(())
    }
}

/// K×T matrix of log returns, one ticker per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub tickers: Vec<String>,
    pub returns: DMatrix<f64>,
    pub horizon: Horizon,
    /// Column ranges of the natural epochs (trading days for quote data).
    pub epochs: Vec<Range<usize>>,
    /// True for columns that span a day boundary.
    pub boundary: Vec<bool>,
    pub origin: String,
    /// Absolute column offset of this panel inside `origin`.
    pub offset: usize,
}

impl ReturnPanel {
    pub fn new(tickers: Vec<String>, returns: DMatrix<f64>, horizon: Horizon, origin: impl Into<String>) -> Result<Self> {
        let t = returns.ncols();
        let panel = Self {
            tickers,
            epochs: vec![0..t],
            boundary: vec![false; t],
            returns,
            horizon,
            origin: origin.into(),
            offset: 0,
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn validate(&self) -> Result<()> {
        let (k, t) = self.returns.shape();
        if k == 0 || t == 0 {
            return Err(Error::Insufficient(format!("empty panel ({k}×{t})")));
        }
        if self.tickers.len() != k {
            return Err(Error::Data(format!("{} tickers for {k} rows", self.tickers.len())));
        }
        if self.boundary.len() != t {
            return Err(Error::Data("boundary flags do not match column count".into()));
        }
        let mut next = 0;
        for r in &self.epochs {
            if r.start != next || r.end <= r.start {
                return Err(Error::Data(format!("epoch ranges do not tile the panel at column {next}")));
            }
            next = r.end;
        }
        if next != t {
            return Err(Error::Data(format!("epoch ranges cover {next} of {t} columns")));
        }
        if self.returns.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite return".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.returns.nrows()
    }

    pub fn t(&self) -> usize {
        self.returns.ncols()
    }

    pub fn slice_id(&self) -> SliceId {
        SliceId::new(self.origin.clone(), self.offset..self.offset + self.t())
    }

    /// Copies a column range; epoch ranges are clipped to it.
    pub fn slice(&self, range: Range<usize>) -> Result<ReturnPanel> {
        if range.end > self.t() || range.start >= range.end {
            return Err(Error::Data(format!("column range {range:?} outside panel of {} columns", self.t())));
        }
        let epochs = self
            .epochs
            .iter()
            .filter_map(|r| {
                let s = r.start.max(range.start);
                let e = r.end.min(range.end);
                (s < e).then(|| s - range.start..e - range.start)
            })
            .collect();
        Ok(ReturnPanel {
            tickers: self.tickers.clone(),
            returns: self.returns.columns_range(range.clone()).into_owned(),
            horizon: self.horizon,
            epochs,
            boundary: self.boundary[range.clone()].to_vec(),
            origin: self.origin.clone(),
            offset: self.offset + range.start,
        })
    }

    /// Drops the flagged day-boundary columns.
    pub fn without_boundary(&self) -> Result<ReturnPanel> {
        let keep: Vec<usize> = (0..self.t()).filter(|&c| !self.boundary[c]).collect();
        let returns = self.returns.select_columns(keep.iter());
        let mut map = vec![0usize; self.t() + 1];
        let mut n = 0;
        for c in 0..self.t() {
            map[c] = n;
            if !self.boundary[c] {
                n += 1;
            }
        }
        map[self.t()] = n;
        let epochs = self
            .epochs
            .iter()
            .map(|r| map[r.start]..map[r.end])
            .filter(|r| r.start < r.end)
            .collect();
        Ok(ReturnPanel {
            tickers: self.tickers.clone(),
            returns,
            horizon: self.horizon,
            epochs,
            boundary: vec![false; n],
            origin: format!("{}-intraday", self.origin),
            offset: 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    TimeSeries,
    PositionSeries,
    MeanOnly,
}

impl NormMode {
    pub fn name(self) -> &'static str {
        match self {
            NormMode::TimeSeries => "time-series",
            NormMode::PositionSeries => "position-series",
            NormMode::MeanOnly => "mean-only",
        }
    }
}

/// A normalized panel together with the statistics that were removed.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPanel {
    pub tickers: Vec<String>,
    pub values: DMatrix<f64>,
    pub mode: NormMode,
    pub horizon: Horizon,
    pub slice: SliceId,
    pub boundary: Vec<bool>,
    /// Row means and population standard deviations (per column for
    /// position series). Standard deviations are all 1 in mean-only mode.
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl NormalizedPanel {
    pub fn k(&self) -> usize {
        self.values.nrows()
    }

    pub fn t(&self) -> usize {
        self.values.ncols()
    }

    pub fn expect_mode(&self, mode: NormMode) -> Result<()> {
        if self.mode == mode {
            Ok(())
        } else {
            Err(Error::WrongMode {
                expected: mode.name(),
                found: self.mode.name(),
            })
        }
    }

    /// All values, row by row.
    pub fn pooled(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len());
        for row in self.values.row_iter() {
            out.extend(row.iter());
        }
        out
    }
}

fn is_degenerate(sd: f64, scale: f64) -> bool {
    !(sd > 1e-13 * scale.max(f64::MIN_POSITIVE))
}

/// Z-scores each row with its own mean and population standard deviation.
pub fn normalize_time_series(panel: &ReturnPanel) -> Result<NormalizedPanel> {
    let (k, t) = panel.returns.shape();
    let mut values = panel.returns.clone();
    let mut means = Vec::with_capacity(k);
    let mut stds = Vec::with_capacity(k);
    for i in 0..k {
        let mut row = values.row_mut(i);
        let mean = row.sum() / t as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
        let sd = var.sqrt();
        let scale = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if is_degenerate(sd, scale) {
            return Err(Error::ConstantRow {
                ticker: panel.tickers[i].clone(),
            });
        }
        row.apply(|v| *v = (*v - mean) / sd);
        means.push(mean);
        stds.push(sd);
    }
    Ok(NormalizedPanel {
        tickers: panel.tickers.clone(),
        values,
        mode: NormMode::TimeSeries,
        horizon: panel.horizon,
        slice: panel.slice_id(),
        boundary: panel.boundary.clone(),
        means,
        stds,
    })
}

/// Z-scores each column across tickers (population divisor K).
pub fn normalize_positions(panel: &ReturnPanel) -> Result<NormalizedPanel> {
    let (k, t) = panel.returns.shape();
    let mut values = panel.returns.clone();
    let mut means = Vec::with_capacity(t);
    let mut stds = Vec::with_capacity(t);
    for c in 0..t {
        let mut col = values.column_mut(c);
        let mean = col.sum() / k as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k as f64).sqrt();
        let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if is_degenerate(sd, scale) {
            return Err(Error::ConstantColumn { column: c });
        }
        col.apply(|v| *v = (*v - mean) / sd);
        means.push(mean);
        stds.push(sd);
    }
    Ok(NormalizedPanel {
        tickers: panel.tickers.clone(),
        values,
        mode: NormMode::PositionSeries,
        horizon: panel.horizon,
        slice: panel.slice_id(),
        boundary: panel.boundary.clone(),
        means,
        stds,
    })
}

/// Removes row means only; used by the covariance path.
pub fn mean_only_normalize(panel: &ReturnPanel) -> NormalizedPanel {
    let (k, t) = panel.returns.shape();
    let mut values = panel.returns.clone();
    let mut means = Vec::with_capacity(k);
    for i in 0..k {
        let mut row = values.row_mut(i);
        let mean = row.sum() / t as f64;
        row.apply(|v| *v -= mean);
        means.push(mean);
    }
    NormalizedPanel {
        tickers: panel.tickers.clone(),
        values,
        mode: NormMode::MeanOnly,
        horizon: panel.horizon,
        slice: panel.slice_id(),
        boundary: panel.boundary.clone(),
        means,
        stds: vec![1.0; k],
    }
}

/// Appends per-epoch normalized panels column-wise without renormalizing.
pub fn concatenate_epochs(parts: &[NormalizedPanel]) -> Result<NormalizedPanel> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Insufficient("no epochs to concatenate".into()))?;
    for p in parts {
        p.expect_mode(NormMode::TimeSeries)?;
        if p.tickers != first.tickers {
            return Err(Error::TickerMismatch(format!(
                "epoch {} has different tickers than {}",
                p.slice, first.slice
            )));
        }
    }
    let k = first.k();
    let t: usize = parts.iter().map(|p| p.t()).sum();
    let mut values = DMatrix::zeros(k, t);
    let mut boundary = Vec::with_capacity(t);
    let mut at = 0;
    for p in parts {
        values.columns_mut(at, p.t()).copy_from(&p.values);
        boundary.extend_from_slice(&p.boundary);
        at += p.t();
    }
    let ids: Vec<&SliceId> = parts.iter().map(|p| &p.slice).collect();
    Ok(NormalizedPanel {
        tickers: first.tickers.clone(),
        values,
        mode: NormMode::TimeSeries,
        horizon: first.horizon,
        slice: SliceId::join(&ids)?,
        boundary,
        means: vec![0.0; k],
        stds: vec![1.0; k],
    })
}

/// Epochs of equal length grouped into consecutive long intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochPartition {
    pub epoch_columns: usize,
    pub epochs: Vec<Range<usize>>,
    pub interval_epochs: usize,
    /// Each interval as a range of epoch indices.
    pub intervals: Vec<Range<usize>>,
    /// Columns left over after the last whole epoch.
    pub remainder: usize,
}

impl EpochPartition {
    /// Column range covered by interval `i`.
    pub fn interval_columns(&self, i: usize) -> Range<usize> {
        let r = &self.intervals[i];
        self.epochs[r.start].start..self.epochs[r.end - 1].end
    }
}

pub fn partition(
    panel: &ReturnPanel,
    epoch_columns: usize,
    interval_epochs: usize,
    allow_remainder: bool,
) -> Result<EpochPartition> {
    if epoch_columns == 0 || interval_epochs == 0 {
        return Err(Error::Parameter("epoch and interval sizes must be positive".into()));
    }
    let t = panel.t();
    let whole = t / epoch_columns;
    let remainder = t % epoch_columns;
    if remainder != 0 && !allow_remainder {
        return Err(Error::Remainder {
            columns: t,
            epoch: epoch_columns,
            deficit: epoch_columns - remainder,
        });
    }
    if whole == 0 {
        return Err(Error::Insufficient(format!("{t} columns cannot hold one {epoch_columns}-column epoch")));
    }
    let epochs: Vec<Range<usize>> = (0..whole).map(|e| e * epoch_columns..(e + 1) * epoch_columns).collect();
    let intervals = (0..whole / interval_epochs)
        .map(|i| i * interval_epochs..(i + 1) * interval_epochs)
        .collect();
    Ok(EpochPartition {
        epoch_columns,
        epochs,
        interval_epochs,
        intervals,
        remainder,
    })
}

/// Uses the panel's own epochs (trading days for ingested data), which may
/// differ in length. `epoch_columns` is the common length, or 0 if they vary.
pub fn partition_native(panel: &ReturnPanel, interval_epochs: usize) -> Result<EpochPartition> {
    if interval_epochs == 0 {
        return Err(Error::Parameter("interval size must be positive".into()));
    }
    let epochs = panel.epochs.clone();
    let first = epochs
        .first()
        .ok_or_else(|| Error::Insufficient("panel has no epochs".into()))?
        .len();
    let epoch_columns = if epochs.iter().all(|r| r.len() == first) { first } else { 0 };
    let intervals = (0..epochs.len() / interval_epochs)
        .map(|i| i * interval_epochs..(i + 1) * interval_epochs)
        .collect();
    let covered = epochs.last().map_or(0, |r| r.end);
    Ok(EpochPartition {
        epoch_columns,
        epochs,
        interval_epochs,
        intervals,
        remainder: panel.t() - covered,
    })
}

/// Normalizes every epoch of a partition on its own columns.
pub fn normalize_epochs(panel: &ReturnPanel, part: &EpochPartition) -> Result<Vec<NormalizedPanel>> {
    use rayon::prelude::*;
    part.epochs
        .par_iter()
        .map(|r| normalize_time_series(&panel.slice(r.clone())?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn panel(rows: &[&[f64]]) -> ReturnPanel {
        let k = rows.len();
        let t = rows[0].len();
        let m = DMatrix::from_fn(k, t, |i, j| rows[i][j]);
        let tickers = (0..k).map(|i| format!("S{i}")).collect();
        ReturnPanel::new(tickers, m, Horizon::Steps(1), "test").unwrap()
    }

    #[test]
    fn time_series_example() {
        let n = normalize_time_series(&panel(&[&[1.0, 2.0, 3.0]])).unwrap();
        let z = 1.224_744_871_391_589;
        for (v, e) in n.values.iter().zip([-z, 0.0, z]) {
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn idempotent() {
        let n = normalize_time_series(&panel(&[&[0.3, -1.0, 2.0, 0.1], &[1.0, 1.5, -0.2, 4.0]])).unwrap();
        let again = ReturnPanel::new(n.tickers.clone(), n.values.clone(), Horizon::Steps(1), "x").unwrap();
        let n2 = normalize_time_series(&again).unwrap();
        assert!((n2.values - n.values).amax() < 1e-12);
    }

    #[test]
    fn native_partition_keeps_uneven_days() {
        let mut p = panel(&[&[0.1, -0.2, 0.3, 0.0, 0.5, -0.1, 0.2]]);
        p.epochs = vec![0..3, 3..5, 5..7];
        let part = partition_native(&p, 2).unwrap();
        assert_eq!(part.epoch_columns, 0);
        assert_eq!(part.intervals, vec![0..2]);
        assert_eq!(part.interval_columns(0), 0..5);
        p.epochs = vec![0..7];
        assert_eq!(partition_native(&p, 1).unwrap().epoch_columns, 7);
    }

    #[test]
    fn constant_row_errors() {
        let err = normalize_time_series(&panel(&[&[1.0, 2.0, 4.0], &[5.0, 5.0, 5.0]])).unwrap_err();
        assert!(matches!(err, Error::ConstantRow { ref ticker } if ticker == "S1"));
    }

    #[test]
    fn positions() {
        let n = normalize_positions(&panel(&[&[1.0, -0.5], &[3.0, 0.5]])).unwrap();
        assert_eq!(n.values.column(0).as_slice(), &[-1.0, 1.0]);
        assert!((n.values[(0, 1)] + 1.0).abs() < 1e-15 && (n.values[(1, 1)] - 1.0).abs() < 1e-15);
        let err = normalize_positions(&panel(&[&[1.0, 2.0], &[1.0, 3.0]])).unwrap_err();
        assert!(matches!(err, Error::ConstantColumn { column: 0 }));
    }

    #[test]
    fn mean_only() {
        let n = mean_only_normalize(&panel(&[&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]]));
        assert_eq!(n.values.row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(n.values.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn partition_counts() {
        let p = panel(&[&[0.0; 250], &[1.0; 250]]);
        assert_eq!(partition(&p, 1, 25, false).unwrap().intervals.len(), 10);
        assert_eq!(partition(&p, 1, 50, false).unwrap().intervals.len(), 5);
        let p7 = panel(&[&[0.0; 7]]);
        match partition(&p7, 3, 1, false) {
            Err(Error::Remainder { deficit, .. }) => assert_eq!(deficit, 2),
            other => panic!("{other:?}"),
        }
        assert_eq!(partition(&p7, 3, 1, true).unwrap().remainder, 1);
    }

    #[test]
    fn concatenation_mismatch() {
        let a = normalize_time_series(&panel(&[&[1.0, 2.0, 0.0], &[0.0, 1.0, 3.0]])).unwrap();
        let mut b = a.clone();
        b.tickers[1] = "ZZZ".into();
        assert!(matches!(concatenate_epochs(&[a.clone(), b]), Err(Error::TickerMismatch(_))));
        let single = concatenate_epochs(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.values, a.values);
        let m = mean_only_normalize(&panel(&[&[1.0, 2.0], &[0.0, 1.0]]));
        assert!(matches!(concatenate_epochs(&[m]), Err(Error::WrongMode { .. })));
    }

    fn arb_panel() -> impl Strategy<Value = ReturnPanel> {
        (2usize..6, 3usize..40).prop_flat_map(|(k, t)| {
            proptest::collection::vec(-5.0f64..5.0, k * t).prop_map(move |v| {
                let m = DMatrix::from_vec(k, t, v);
                ReturnPanel::new((0..k).map(|i| i.to_string()).collect(), m, Horizon::Steps(1), "p").unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn row_moments(p in arb_panel()) {
            let n = normalize_time_series(&p).unwrap();
            let t = n.t() as f64;
            for row in n.values.row_iter() {
                prop_assert!(row.sum().abs() < 1e-12 * t);
                prop_assert!((row.iter().map(|v| v * v).sum::<f64>() / t - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn column_moments(p in arb_panel()) {
            let n = match normalize_positions(&p) {
                Ok(n) => n,
                Err(e) => {
                    prop_assert!(matches!(e, Error::ConstantColumn { .. }), "{e:?}");
                    return Ok(());
                }
            };
            let k = n.k() as f64;
            for (c, col) in n.values.column_iter().enumerate() {
                // roundoff grows as |x| / sd for nearly constant columns
                let cond = (p.returns.column(c).amax() / n.stds[c]).max(1.0);
                prop_assert!(col.sum().abs() < 1e-14 * k * cond);
                prop_assert!((col.iter().map(|v| v * v).sum::<f64>() / k - 1.0).abs() < 1e-14 * cond);
            }
        }

        #[test]
        fn partition_concat_round_trip(p in arb_panel(), e in 1usize..4) {
            let part = partition(&p, e, 1, true).unwrap();
            let cols = part.epochs.last().unwrap().end;
            let slices: Vec<ReturnPanel> = part.epochs.iter().map(|r| p.slice(r.clone()).unwrap()).collect();
            let mut joined = DMatrix::zeros(p.k(), cols);
            let mut at = 0;
            for s in &slices {
                joined.columns_mut(at, s.t()).copy_from(&s.returns);
                at += s.t();
            }
            prop_assert_eq!(joined, p.returns.columns(0, cols).into_owned());
            let ids: Vec<SliceId> = slices.iter().map(|s| s.slice_id()).collect();
            let refs: Vec<&SliceId> = ids.iter().collect();
            prop_assert_eq!(SliceId::join(&refs).unwrap(), SliceId::new("p", 0..cols));
        }
    }
}
