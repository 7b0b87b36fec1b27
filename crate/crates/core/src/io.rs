//! Columnar binary container for matrices.
//!
//! A container is two files: `<stem>.bin` holds the matrix column by column
//! as little-endian IEEE-754 doubles with no header, and `<stem>.json` holds
//! the metadata needed to interpret it (shape, row labels, mode, epochs).

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::epochs::{Horizon, ReturnPanel};
use crate::error::{Error, Result};
use crate::ingest::PriceGrid;

pub const FORMAT: &str = "mvdist-columnar-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub rows: usize,
    pub cols: usize,
    /// Row labels, usually tickers.
    pub labels: Vec<String>,
    /// Free-form content tag, e.g. "returns", "time-series", "eigenvectors".
    pub mode: String,
    pub horizon: Option<Horizon>,
    pub epochs: Vec<Range<usize>>,
    pub boundary: Vec<usize>,
    pub origin: String,
    pub offset: usize,
    /// Column timestamps, present for price grids.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub times: Vec<NaiveDateTime>,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

pub fn write_matrix(stem: &Path, m: &DMatrix<f64>, meta: &Sidecar) -> Result<()> {
    if meta.rows != m.nrows() || meta.cols != m.ncols() {
        return Err(Error::Parameter("sidecar shape does not match the matrix".into()));
    }
    let (bin, json) = paths(stem);
    let mut bytes = Vec::with_capacity(8 * m.len());
    for v in m.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(bin, bytes)?;
    fs::write(json, serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

pub fn read_matrix(stem: &Path) -> Result<(DMatrix<f64>, Sidecar)> {
    let (bin, json) = paths(stem);
    let meta: Sidecar = serde_json::from_str(&fs::read_to_string(json)?)?;
    if meta.format != FORMAT {
        return Err(Error::Schema(format!("unknown container format {:?}", meta.format)));
    }
    let bytes = fs::read(bin)?;
    if bytes.len() != 8 * meta.rows * meta.cols {
        return Err(Error::Data(format!(
            "container holds {} bytes, expected {} for {}×{}",
            bytes.len(),
            8 * meta.rows * meta.cols,
            meta.rows,
            meta.cols
        )));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    Ok((DMatrix::from_iterator(meta.rows, meta.cols, values), meta))
}

pub fn write_panel(stem: &Path, p: &ReturnPanel) -> Result<()> {
    let meta = Sidecar {
        format: FORMAT.into(),
        rows: p.k(),
        cols: p.t(),
        labels: p.tickers.clone(),
        mode: "returns".into(),
        horizon: Some(p.horizon),
        epochs: p.epochs.clone(),
        boundary: (0..p.t()).filter(|&c| p.boundary[c]).collect(),
        origin: p.origin.clone(),
        offset: p.offset,
        times: Vec::new(),
    };
    write_matrix(stem, &p.returns, &meta)
}

pub fn read_panel(stem: &Path) -> Result<ReturnPanel> {
    let (returns, meta) = read_matrix(stem)?;
    if meta.mode != "returns" {
        return Err(Error::Schema(format!("container holds {:?}, not returns", meta.mode)));
    }
    let mut boundary = vec![false; meta.cols];
    for c in meta.boundary {
        *boundary
            .get_mut(c)
            .ok_or_else(|| Error::Data(format!("boundary index {c} out of range")))? = true;
    }
    let p = ReturnPanel {
        tickers: meta.labels,
        returns,
        horizon: meta.horizon.unwrap_or(Horizon::Steps(1)),
        epochs: meta.epochs,
        boundary,
        origin: meta.origin,
        offset: meta.offset,
    };
    p.validate()?;
    Ok(p)
}

/// Stores a price grid. Day ranges go to `epochs`, gap indices to `boundary`.
pub fn write_grid(stem: &Path, g: &PriceGrid) -> Result<()> {
    let meta = Sidecar {
        format: FORMAT.into(),
        rows: g.prices.nrows(),
        cols: g.prices.ncols(),
        labels: g.tickers.clone(),
        mode: "prices".into(),
        horizon: Some(g.horizon),
        epochs: g.days.clone(),
        boundary: g.gaps.clone(),
        origin: String::new(),
        offset: 0,
        times: g.times.clone(),
    };
    write_matrix(stem, &g.prices, &meta)
}

pub fn read_grid(stem: &Path) -> Result<PriceGrid> {
    let (prices, meta) = read_matrix(stem)?;
    if meta.mode != "prices" {
        return Err(Error::Schema(format!("container holds {:?}, not prices", meta.mode)));
    }
    if meta.times.len() != meta.cols {
        return Err(Error::Schema(format!("{} timestamps for {} columns", meta.times.len(), meta.cols)));
    }
    Ok(PriceGrid {
        tickers: meta.labels,
        times: meta.times,
        prices,
        horizon: meta.horizon.unwrap_or(Horizon::Steps(1)),
        days: meta.epochs,
        gaps: meta.boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panel_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DMatrix::from_fn(3, 5, |i, j| (i as f64 - 1.3) * (j as f64 + 0.1).ln());
        let mut p = ReturnPanel::new(vec!["A".into(), "B".into(), "C".into()], m, Horizon::Seconds(10), "q").unwrap();
        p.epochs = vec![0..2, 2..5];
        p.boundary[2] = true;
        let stem = dir.path().join("panel");
        write_panel(&stem, &p).unwrap();
        assert_eq!(std::fs::metadata(stem.with_extension("bin")).unwrap().len(), 120);
        assert_eq!(read_panel(&stem).unwrap(), p);
    }

    #[test]
    fn grid_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let day = chrono::NaiveDate::from_ymd_opt(2014, 3, 4).unwrap();
        let times: Vec<NaiveDateTime> = (0..4).map(|s| day.and_hms_opt(9, 40, s * 10).unwrap()).collect();
        let g = PriceGrid {
            tickers: vec!["X".into(), "Y".into()],
            times,
            prices: DMatrix::from_fn(2, 4, |i, j| 10.0 + i as f64 + 0.01 * j as f64),
            horizon: Horizon::Seconds(10),
            days: vec![0..4],
            gaps: vec![2],
        };
        let stem = dir.path().join("grid");
        write_grid(&stem, &g).unwrap();
        assert_eq!(read_grid(&stem).unwrap(), g);
        assert!(read_panel(&stem).is_err());
    }
}
