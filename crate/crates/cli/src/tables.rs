//! CSV tables in the column orders of the published fit tables.

use std::path::Path;

use mvdist_core::fitting::{EpochAverage, FitKind};
use mvdist_core::{Family, FitResult, Horizon, Result, Scale};

use crate::ops::{ensure_parent, num, opt_num};

/// Fits of one long interval.
#[derive(Debug, Clone)]
pub struct IntervalFits {
    /// Interval length in epochs.
    pub length: usize,
    /// One-based position among intervals of the same length.
    pub number: usize,
    pub fits: Vec<FitResult>,
}

impl IntervalFits {
    pub fn label(&self) -> String {
        format!("interval {}", self.number)
    }

    pub fn get(&self, family: Family, scale: Scale) -> Option<&FitResult> {
        self.fits
            .iter()
            .find(|f| f.kind.family() == Some(family) && f.scale == scale)
    }
}

const PARAM_COLUMNS: [&str; 6] = ["GG_N", "GA_L", "GA_N", "AG_N", "AA_L", "AA_N"];

fn dt(h: Option<Horizon>) -> String {
    h.map(|h| h.to_string()).unwrap_or_default()
}

/// N for GG and AG, (L, N) for GA and AA.
fn params(get: impl Fn(Family) -> (Option<f64>, Option<f64>)) -> Vec<String> {
    let (gg, ga, ag, aa) = (get(Family::GG), get(Family::GA), get(Family::AG), get(Family::AA));
    vec![
        opt_num(gg.1),
        opt_num(ga.0),
        opt_num(ga.1),
        opt_num(ag.1),
        opt_num(aa.0),
        opt_num(aa.1),
    ]
}

fn fit_params(f: Option<&FitResult>) -> (Option<f64>, Option<f64>) {
    f.map_or((None, None), |f| (f.big_l, f.n))
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn write(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per epoch and scale: `date,fit,dt,l_rot,chi2_ln,chi2_lin`, with
/// only the fitted scale's χ² filled in.
pub fn epoch_fits(path: &Path, rows: &[(String, FitResult)]) -> Result<()> {
    let rows = rows
        .iter()
        .map(|(label, f)| {
            let (ln, lin) = match f.scale {
                Scale::Log => (opt_num(f.chi2_ln), String::new()),
                Scale::Lin => (String::new(), num(f.chi2_lin)),
            };
            vec![label.clone(), f.scale.to_string(), dt(f.horizon), opt_num(f.l), ln, lin]
        })
        .collect();
    write(path, &["date", "fit", "dt", "l_rot", "chi2_ln", "chi2_lin"], rows)
}

/// `fit,dt,l_rot_mean,chi2_ln_mean,chi2_lin_mean`.
pub fn epoch_averages(path: &Path, avgs: &[EpochAverage]) -> Result<()> {
    let rows = avgs
        .iter()
        .map(|a| {
            let (ln, lin) = match a.scale {
                Scale::Log => (opt_num(a.chi2_ln_mean), String::new()),
                Scale::Lin => (String::new(), num(a.chi2_lin_mean)),
            };
            vec![a.scale.to_string(), dt(a.horizon), num(a.l_mean), ln, lin]
        })
        .collect();
    write(path, &["fit", "dt", "l_rot_mean", "chi2_ln_mean", "chi2_lin_mean"], rows)
}

/// `interval,fit,dt,length,GG_N,GA_L,GA_N,AG_N,AA_L,AA_N`.
pub fn interval_params(path: &Path, intervals: &[IntervalFits], scales: &[Scale]) -> Result<()> {
    let mut rows = Vec::new();
    for iv in intervals {
        for &s in scales {
            let h = iv.fits.iter().find_map(|f| f.horizon);
            let mut row = vec![iv.label(), s.to_string(), dt(h), iv.length.to_string()];
            row.extend(params(|fam| fit_params(iv.get(fam, s))));
            rows.push(row);
        }
    }
    let mut header = vec!["interval", "fit", "dt", "length"];
    header.extend(PARAM_COLUMNS);
    write(path, &header, rows)
}

/// `length,fit,dt,interval,GG,GA,AG,AA` holding the fitted scale's χ².
pub fn interval_chi2(path: &Path, intervals: &[IntervalFits], scales: &[Scale]) -> Result<()> {
    let mut rows = Vec::new();
    for iv in intervals {
        for &s in scales {
            let h = iv.fits.iter().find_map(|f| f.horizon);
            let mut row = vec![iv.length.to_string(), s.to_string(), dt(h), iv.label()];
            row.extend(Family::ALL.iter().map(|&fam| opt_num(iv.get(fam, s).and_then(FitResult::chi2))));
            rows.push(row);
        }
    }
    write(path, &["length", "fit", "dt", "interval", "GG", "GA", "AG", "AA"], rows)
}

/// Means over intervals of equal length: `fit,dt,length,GG_N,…,AA_N`.
pub fn interval_averages(path: &Path, intervals: &[IntervalFits], scales: &[Scale]) -> Result<()> {
    let mut lengths: Vec<usize> = intervals.iter().map(|i| i.length).collect();
    lengths.dedup();
    let mut rows = Vec::new();
    for &s in scales {
        for &len in &lengths {
            let group: Vec<&IntervalFits> = intervals.iter().filter(|i| i.length == len).collect();
            let h = group.iter().flat_map(|i| &i.fits).find_map(|f| f.horizon);
            let mut row = vec![s.to_string(), dt(h), len.to_string()];
            row.extend(params(|fam| {
                (
                    mean(group.iter().map(|i| fit_params(i.get(fam, s)).0)),
                    mean(group.iter().map(|i| fit_params(i.get(fam, s)).1)),
                )
            }));
            rows.push(row);
        }
    }
    let mut header = vec!["fit", "dt", "length"];
    header.extend(PARAM_COLUMNS);
    write(path, &header, rows)
}

/// Parameters of every interval of one length and scale:
/// `interval,GG_N,GA_L,GA_N,AG_N,AA_L,AA_N`.
pub fn interval_sweep(path: &Path, intervals: &[IntervalFits], length: usize, scale: Scale) -> Result<()> {
    let rows = intervals
        .iter()
        .filter(|i| i.length == length)
        .map(|iv| {
            let mut row = vec![iv.label()];
            row.extend(params(|fam| fit_params(iv.get(fam, scale))));
            row
        })
        .collect();
    let mut header = vec!["interval"];
    header.extend(PARAM_COLUMNS);
    write(path, &header, rows)
}

/// Every fit as a flat record, for tools that want one table.
pub fn all_fits(path: &Path, epochs: &[(String, FitResult)], intervals: &[IntervalFits]) -> Result<()> {
    let record = |slice: String, length: String, f: &FitResult| {
        let kind = if f.kind == FitKind::Epoch { "epoch".to_string() } else { f.kind.to_string() };
        vec![
            slice,
            length,
            f.scale.to_string(),
            dt(f.horizon),
            kind,
            opt_num(f.l),
            opt_num(f.n),
            opt_num(f.big_l),
            opt_num(f.chi2_ln),
            num(f.chi2_lin),
            f.bins_used.to_string(),
            f.boundary.any().to_string(),
        ]
    };
    let mut rows: Vec<Vec<String>> = epochs
        .iter()
        .map(|(label, f)| record(label.clone(), String::new(), f))
        .collect();
    for iv in intervals {
        for f in &iv.fits {
            rows.push(record(iv.label(), iv.length.to_string(), f));
        }
    }
    write(
        path,
        &["slice", "length", "scale", "dt", "family", "l", "N", "L", "chi2_ln", "chi2_lin", "bins", "at_bound"],
        rows,
    )
}
