//! Comparative experiments built from the pipeline stages.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{estimate_density, BinningRule, EmpiricalDensity};
use crate::epochs::{concatenate_epochs, mean_only_normalize, normalize_epochs, normalize_time_series, partition, NormalizedPanel, ReturnPanel};
use crate::error::{Error, Result};
use crate::fitting::{tail_exponent, FitResult, TailFit};
use crate::rotate::{aggregate, rotate_returns};
use crate::seed::{self, stage};
use crate::spectra::{covariance, eigendecompose, ledoit_wolf, time_correlation};
use crate::stats;

/// Abscissas at which model curves are compared.
pub const REFERENCE_ABSCISSAS: [f64; 2] = [5.0, 8.0];

/// Rotates a time-series-normalized panel into the eigenbasis of its own
/// correlation matrix and pools the rescaled returns.
pub fn aggregate_slice(panel: &NormalizedPanel) -> Result<Vec<f64>> {
    let spec = eigendecompose(&time_correlation(panel)?)?;
    Ok(aggregate(&rotate_returns(panel, &spec)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayPoint {
    pub x: f64,
    pub interval_density: f64,
    /// Fraction of epoch curves strictly above the interval curve.
    pub epoch_exceeds: f64,
    /// Fraction of epoch curves strictly below the interval curve.
    pub interval_exceeds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayReport {
    pub epochs: usize,
    pub points: Vec<OverlayPoint>,
    /// Common grid and the curves on it, interval first.
    pub grid: Vec<f64>,
    pub interval_curve: Vec<f64>,
    pub epoch_curves: Vec<Vec<f64>>,
}

/// Compares every epoch model curve with the interval model curve.
pub fn epoch_vs_interval_overlay(epoch_fits: &[FitResult], interval_fit: &FitResult, grid: &[f64]) -> Result<OverlayReport> {
    let first = epoch_fits
        .first()
        .ok_or_else(|| Error::Insufficient("no epoch fits to overlay".into()))?;
    if epoch_fits
        .iter()
        .any(|f| f.scale != first.scale || f.horizon != first.horizon)
        || interval_fit.scale != first.scale
        || interval_fit.horizon != first.horizon
    {
        return Err(Error::Parameter("overlay fits disagree on scale or horizon".into()));
    }
    let interval = interval_fit.model()?;
    let epochs: Vec<_> = epoch_fits.iter().map(FitResult::model).collect::<Result<_>>()?;
    let mut points = Vec::new();
    for &x in &REFERENCE_ABSCISSAS {
        let p = interval.pdf(x)?;
        let vals: Vec<f64> = epochs.iter().map(|m| m.pdf(x)).collect::<Result<_>>()?;
        let n = vals.len() as f64;
        points.push(OverlayPoint {
            x,
            interval_density: p,
            epoch_exceeds: vals.iter().filter(|&&v| v > p).count() as f64 / n,
            interval_exceeds: vals.iter().filter(|&&v| p > v).count() as f64 / n,
        });
    }
    Ok(OverlayReport {
        epochs: epochs.len(),
        points,
        grid: grid.to_vec(),
        interval_curve: interval.curve(grid)?,
        epoch_curves: epochs.par_iter().map(|m| m.curve(grid)).collect::<Result<_>>()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthComparison {
    pub short_intervals: usize,
    pub long_intervals: usize,
    pub mean_n_short: f64,
    pub mean_n_long: f64,
    pub mean_big_l_short: Option<f64>,
    pub mean_big_l_long: Option<f64>,
    /// Mean long-interval density at |x| = 8 over the short-interval mean.
    pub tail_ratio: f64,
    pub n_difference: f64,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.collect::<Option<_>>()?;
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn interval_length_comparison(short: &[FitResult], long: &[FitResult]) -> Result<LengthComparison> {
    if short.is_empty() || long.is_empty() {
        return Err(Error::Insufficient("interval comparison needs fits of both lengths".into()));
    }
    let first = &short[0];
    if short.iter().chain(long).any(|f| f.kind != first.kind || f.scale != first.scale || f.horizon != first.horizon) {
        return Err(Error::Parameter("interval fits disagree on family, scale or horizon".into()));
    }
    let tail = |fits: &[FitResult]| -> Result<f64> {
        let mut s = 0.0;
        for f in fits {
            s += f.model()?.pdf(8.0)?;
        }
        Ok(s / fits.len() as f64)
    };
    let mean_n_short = mean_of(short.iter().map(|f| f.n)).unwrap_or(f64::NAN);
    let mean_n_long = mean_of(long.iter().map(|f| f.n)).unwrap_or(f64::NAN);
    Ok(LengthComparison {
        short_intervals: short.len(),
        long_intervals: long.len(),
        mean_n_short,
        mean_n_long,
        mean_big_l_short: mean_of(short.iter().map(|f| f.big_l)),
        mean_big_l_long: mean_of(long.iter().map(|f| f.big_l)),
        tail_ratio: tail(long)? / tail(short)?,
        n_difference: mean_n_long - mean_n_short,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionStats {
    pub condition: String,
    pub samples: usize,
    pub excess_kurtosis: f64,
    pub tails: Option<TailFit>,
}

fn condition(name: &str, pool: &[f64]) -> Result<ConditionStats> {
    Ok(ConditionStats {
        condition: name.into(),
        samples: pool.len(),
        excess_kurtosis: stats::excess_kurtosis(pool)?,
        tails: tail_exponent(pool, (0.95, 0.999), 20).ok(),
    })
}

#[derive(Debug, Serialize)]
pub struct OvernightReport {
    pub boundary_returns: usize,
    pub aggregated: [ConditionStats; 2],
    pub original: [ConditionStats; 2],
    #[serde(skip)]
    pub densities: Vec<EmpiricalDensity>,
}

impl OvernightReport {
    /// Rise in aggregated excess kurtosis when boundary returns are kept.
    pub fn kurtosis_rise(&self) -> f64 {
        self.aggregated[0].excess_kurtosis - self.aggregated[1].excess_kurtosis
    }
}

/// Aggregated and normalized-original pools with and without the flagged
/// day-boundary returns of `panel`. Each condition is normalized over its own
/// columns.
pub fn overnight_study(panel: &ReturnPanel, binning: &BinningRule) -> Result<OvernightReport> {
    let boundary_returns = panel.boundary.iter().filter(|b| **b).count();
    if panel.epochs.len() < 2 || boundary_returns == 0 {
        return Err(Error::Insufficient("overnight study needs a multi-day panel with boundary returns".into()));
    }
    let include = normalize_time_series(panel)?;
    let exclude = normalize_time_series(&panel.without_boundary()?)?;
    let mut aggregated = Vec::new();
    let mut original = Vec::new();
    let mut densities = Vec::new();
    for (name, n) in [("include", &include), ("exclude", &exclude)] {
        let pool = aggregate_slice(n)?;
        let orig = n.pooled();
        densities.push(estimate_density(&pool, binning, &format!("aggr,{name}"))?);
        densities.push(estimate_density(&orig, binning, &format!("orig,{name}"))?);
        aggregated.push(condition(name, &pool)?);
        original.push(condition(name, &orig)?);
    }
    let [a0, a1]: [ConditionStats; 2] = aggregated.try_into().expect("two conditions");
    let [o0, o1]: [ConditionStats; 2] = original.try_into().expect("two conditions");
    Ok(OvernightReport {
        boundary_returns,
        aggregated: [a0, a1],
        original: [o0, o1],
        densities,
    })
}

/// Pair enumeration policy for the 2×2 aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairSampling {
    /// All pairs are used up to this many tickers.
    pub full_up_to: usize,
    /// Pairs drawn above that size.
    pub sampled_pairs: usize,
    pub seed: u64,
}

impl Default for PairSampling {
    fn default() -> Self {
        Self {
            full_up_to: 500,
            sampled_pairs: 124_750,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwisePool {
    pub values: Vec<f64>,
    pub pairs_used: usize,
    /// Pairs left out because `|ρ| = 1`.
    pub skipped: Vec<(usize, usize)>,
}

fn pair_at(mut p: usize, k: usize) -> (usize, usize) {
    let mut i = 0;
    while p >= k - 1 - i {
        p -= k - 1 - i;
        i += 1;
    }
    (i, i + 1 + p)
}

/// Rotates every ticker pair into the eigenbasis of its own 2×2 correlation
/// matrix, rescales and pools. `stream` separates the seeds of different
/// slices.
pub fn pairwise_aggregate(panel: &NormalizedPanel, sampling: &PairSampling, stream: u64) -> Result<PairwisePool> {
    panel.expect_mode(crate::epochs::NormMode::TimeSeries)?;
    let (k, t) = (panel.k(), panel.t());
    if k < 2 || t < 2 {
        return Err(Error::Insufficient(format!("pairwise aggregation of a {k}×{t} panel")));
    }
    let total = k * (k - 1) / 2;
    let pairs: Vec<usize> = if k <= sampling.full_up_to || sampling.sampled_pairs >= total {
        (0..total).collect()
    } else {
        let mut rng = seed::rng(sampling.seed, stage::PAIRS, stream);
        let mut v = index::sample(&mut rng, total, sampling.sampled_pairs).into_vec();
        v.sort_unstable();
        v
    };
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let blocks: Vec<std::result::Result<Vec<f64>, (usize, usize)>> = pairs
        .par_iter()
        .map(|&p| {
            let (i, j) = pair_at(p, k);
            let x = panel.values.row(i);
            let y = panel.values.row(j);
            let rho = x.dot(&y) / t as f64;
            if rho.abs() >= 1.0 - 1e-12 {
                return Err((i, j));
            }
            // ascending eigenvalues; for ρ = 0 the tie goes to (1,-1)/√2
            let (lo, hi) = ((1.0 - rho, -1.0), (1.0 + rho, 1.0));
            let order = if rho >= 0.0 { [lo, hi] } else { [hi, lo] };
            let mut out = Vec::with_capacity(2 * t);
            for (lambda, s) in order {
                let scale = h / lambda.sqrt();
                out.extend(x.iter().zip(y.iter()).map(|(a, b)| (a + s * b) * scale));
            }
            Ok(out)
        })
        .collect();
    let mut values = Vec::with_capacity(2 * t * pairs.len());
    let mut skipped = Vec::new();
    for b in blocks {
        match b {
            Ok(v) => values.extend(v),
            Err(pair) => skipped.push(pair),
        }
    }
    Ok(PairwisePool {
        pairs_used: pairs.len() - skipped.len(),
        values,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthRow {
    pub epoch_length: usize,
    pub epochs: usize,
    pub samples: usize,
    /// Bias-corrected excess kurtosis of the pooled normalized returns.
    pub excess_kurtosis: f64,
    /// Pearson kurtosis of the same pool.
    pub kurtosis: f64,
    pub ks_normal: f64,
    /// `"full"` or `"pairwise"`.
    pub aggregation: String,
    pub aggregated_excess_kurtosis: f64,
    pub aggregated_ks_normal: f64,
}

#[derive(Debug, Serialize)]
pub struct EpochLengthReport {
    pub rows: Vec<LengthRow>,
    #[serde(skip)]
    pub densities: Vec<EmpiricalDensity>,
}

/// Per-epoch normalization at several epoch lengths.
pub fn epoch_length_study(panel: &ReturnPanel, lengths: &[usize], binning: &BinningRule, sampling: &PairSampling) -> Result<EpochLengthReport> {
    let mut rows = Vec::new();
    let mut densities = Vec::new();
    for &len in lengths {
        if len < 2 || len > panel.t() {
            return Err(Error::Insufficient(format!(
                "epoch length {len} does not fit a panel of {} columns",
                panel.t()
            )));
        }
        let part = partition(panel, len, 1, true)?;
        let normalized = normalize_epochs(panel, &part)?;
        let pooled: Vec<f64> = normalized.iter().flat_map(|n| n.pooled()).collect();
        let pairwise = len <= panel.k();
        let aggregated: Vec<f64> = normalized
            .par_iter()
            .enumerate()
            .map(|(e, n)| {
                if pairwise {
                    pairwise_aggregate(n, sampling, e as u64).map(|p| p.values)
                } else {
                    aggregate_slice(n)
                }
            })
            .collect::<Result<Vec<_>>>()?
            .concat();
        densities.push(estimate_density(&pooled, binning, &format!("orig,T={len}"))?);
        densities.push(estimate_density(&aggregated, binning, &format!("aggr,T={len}"))?);
        rows.push(LengthRow {
            epoch_length: len,
            epochs: normalized.len(),
            samples: pooled.len(),
            excess_kurtosis: stats::excess_kurtosis(&pooled)?,
            kurtosis: stats::kurtosis(&pooled),
            ks_normal: stats::ks_statistic(&pooled, stats::normal_cdf),
            aggregation: if pairwise { "pairwise" } else { "full" }.into(),
            aggregated_excess_kurtosis: stats::excess_kurtosis(&aggregated)?,
            aggregated_ks_normal: stats::ks_statistic(&aggregated, stats::normal_cdf),
        });
    }
    Ok(EpochLengthReport { rows, densities })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageEpoch {
    pub epoch: usize,
    pub intensity: f64,
    pub ks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageReport {
    pub epochs: Vec<ShrinkageEpoch>,
    /// Epochs left out, with the reason.
    pub skipped: Vec<(usize, String)>,
    pub median_ks: f64,
}

/// Raw versus Ledoit–Wolf-shrunk correlation matrices, epoch by epoch.
pub fn shrinkage_study(panel: &ReturnPanel, epoch_len: usize, intensity: Option<f64>) -> Result<ShrinkageReport> {
    let part = partition(panel, epoch_len, 1, true)?;
    let results: Vec<std::result::Result<ShrinkageEpoch, (usize, String)>> = part
        .epochs
        .par_iter()
        .enumerate()
        .map(|(e, r)| {
            let run = || -> Result<ShrinkageEpoch> {
                let slice = panel.slice(r.clone())?;
                let normalized = normalize_time_series(&slice)?;
                let centred = mean_only_normalize(&slice);
                // both matrices come from the covariance path so that δ = 0 is exact
                let raw = eigendecompose(&covariance(&centred)?.to_correlation()?)?;
                raw.require_full_rank()?;
                let shrink = ledoit_wolf(&centred, intensity)?;
                let shrunk = eigendecompose(&shrink.correlation()?)?;
                let a = aggregate(&rotate_returns(&normalized, &raw)?);
                let b = aggregate(&rotate_returns(&normalized, &shrunk)?);
                Ok(ShrinkageEpoch {
                    epoch: e,
                    intensity: shrink.intensity,
                    ks: stats::ks_two_sample(&a, &b),
                })
            };
            run().map_err(|err| (e, err.to_string()))
        })
        .collect();
    let mut epochs = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(e) => epochs.push(e),
            Err(s) => skipped.push(s),
        }
    }
    if epochs.is_empty() {
        return Err(Error::Insufficient("no full-rank epochs".into()));
    }
    let ks: Vec<f64> = stats::sorted(&epochs.iter().map(|e| e.ks).collect::<Vec<_>>());
    Ok(ShrinkageReport {
        median_ks: stats::quantile_sorted(&ks, 0.5),
        epochs,
        skipped,
    })
}

/// Per-epoch normalization followed by concatenation of consecutive runs of
/// `interval_epochs` epochs.
pub fn interval_panels(panel: &ReturnPanel, epoch_len: usize, interval_epochs: usize) -> Result<Vec<NormalizedPanel>> {
    let part = partition(panel, epoch_len, interval_epochs, true)?;
    let normalized = normalize_epochs(panel, &part)?;
    part.intervals
        .iter()
        .map(|r| concatenate_epochs(&normalized[r.clone()]))
        .collect()
}
