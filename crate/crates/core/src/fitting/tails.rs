//! Power-law tail slopes from log-log regressions.

use serde::{Deserialize, Serialize};

use crate::density::EmpiricalDensity;
use crate::error::{Error, Result};
use crate::stats;

/// Minimum non-empty bins per tail.
const MIN_TAIL_BINS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSide {
    /// Least-squares slope of `ln p` against `ln |x|`.
    pub slope: f64,
    pub bins: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub quantiles: (f64, f64),
    /// `|x|` range covered, from the quantiles of `|samples|`.
    pub range: (f64, f64),
    pub positive: TailSide,
    pub negative: TailSide,
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn side(mags: &[f64], lo: f64, hi: f64, bins: usize, total: usize, sign: &str) -> Result<TailSide> {
    let (llo, lhi) = (lo.ln(), hi.ln());
    let step = (lhi - llo) / bins as f64;
    let mut counts = vec![0usize; bins];
    let mut used = 0;
    for &m in mags {
        if m < lo || m > hi {
            continue;
        }
        let b = (((m.ln() - llo) / step) as usize).min(bins - 1);
        counts[b] += 1;
        used += 1;
    }
    let points: Vec<(f64, f64)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(b, &c)| {
            let (a, z) = ((llo + b as f64 * step).exp(), (llo + (b + 1) as f64 * step).exp());
            ((a * z).sqrt().ln(), (c as f64 / (total as f64 * (z - a))).ln())
        })
        .collect();
    if points.len() < MIN_TAIL_BINS {
        return Err(Error::Insufficient(format!(
            "{} non-empty {sign} tail bins, need {MIN_TAIL_BINS}",
            points.len()
        )));
    }
    Ok(TailSide {
        slope: slope(&points),
        bins: points.len(),
        samples: used,
    })
}

/// Tail slopes over `|x|` between the `quantiles` of `|samples|`, using
/// `bins` logarithmically spaced bins per sign.
pub fn tail_exponent(samples: &[f64], quantiles: (f64, f64), bins: usize) -> Result<TailFit> {
    let (qlo, qhi) = quantiles;
    if !(0.0 < qlo && qlo < qhi && qhi <= 1.0) || bins < MIN_TAIL_BINS {
        return Err(Error::Parameter(format!("invalid tail region {quantiles:?} with {bins} bins")));
    }
    let abs: Vec<f64> = samples.iter().map(|v| v.abs()).collect();
    let sorted = stats::sorted(&abs);
    if sorted.is_empty() {
        return Err(Error::Insufficient("no samples".into()));
    }
    let lo = stats::quantile_sorted(&sorted, qlo);
    let hi = stats::quantile_sorted(&sorted, qhi);
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Insufficient(format!("degenerate tail range [{lo}, {hi}]")));
    }
    let pos: Vec<f64> = samples.iter().filter(|v| **v > 0.0).copied().collect();
    let neg: Vec<f64> = samples.iter().filter(|v| **v < 0.0).map(|v| -v).collect();
    Ok(TailFit {
        quantiles,
        range: (lo, hi),
        positive: side(&pos, lo, hi, bins, samples.len(), "positive")?,
        negative: side(&neg, lo, hi, bins, samples.len(), "negative")?,
    })
}

/// Tail slopes from an existing histogram over bins with centre `|x|` in `[lo, hi]`.
pub fn tail_exponent_binned(density: &EmpiricalDensity, lo: f64, hi: f64) -> Result<TailFit> {
    let centers = density.centers();
    let collect = |positive: bool| -> Result<TailSide> {
        let mut points = Vec::new();
        let mut samples = 0;
        for (b, &c) in centers.iter().enumerate() {
            let m = c.abs();
            if (c > 0.0) == positive && c != 0.0 && m >= lo && m <= hi && density.counts[b] > 0 {
                points.push((m.ln(), density.density[b].ln()));
                samples += density.counts[b] as usize;
            }
        }
        if points.len() < MIN_TAIL_BINS {
            return Err(Error::Insufficient(format!("{} usable tail bins, need {MIN_TAIL_BINS}", points.len())));
        }
        Ok(TailSide {
            slope: slope(&points),
            bins: points.len(),
            samples,
        })
    };
    Ok(TailFit {
        quantiles: (f64::NAN, f64::NAN),
        range: (lo, hi),
        positive: collect(true)?,
        negative: collect(false)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn pareto_and_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // pdf ∝ |x|^-4 for |x| > 1: inverse-cdf Pareto with α = 3, random sign
        let x: Vec<f64> = (0..1_000_000)
            .map(|_| {
                let u: f64 = rng.random();
                let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                s * (1.0 - u).powf(-1.0 / 3.0)
            })
            .collect();
        let t = tail_exponent(&x, (0.95, 0.999), 20).unwrap();
        assert!((t.positive.slope + 4.0).abs() < 0.3 && (t.negative.slope + 4.0).abs() < 0.3, "{t:?}");
        let g: Vec<f64> = (0..1_000_000).map(|_| rng.sample(StandardNormal)).collect();
        let tg = tail_exponent(&g, (0.95, 0.999), 20).unwrap();
        assert!(tg.positive.slope < -6.0 && tg.negative.slope < -6.0, "{tg:?}");
    }

    #[test]
    fn too_few_bins() {
        let x: Vec<f64> = (1..50).map(|i| i as f64).collect();
        assert!(tail_exponent(&x, (0.5, 0.9), 10).is_err());
    }
}
