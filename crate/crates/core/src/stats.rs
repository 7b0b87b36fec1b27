//! Sample moments, quantiles and Kolmogorov–Smirnov distances.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Central moments `(m2, m4)` with divisor n.
fn central_2_4(x: &[f64]) -> (f64, f64) {
    let m = mean(x);
    let (mut s2, mut s4) = (0.0, 0.0);
    for v in x {
        let d = (v - m) * (v - m);
        s2 += d;
        s4 += d * d;
    }
    let n = x.len() as f64;
    (s2 / n, s4 / n)
}

/// Population variance.
pub fn variance(x: &[f64]) -> f64 {
    central_2_4(x).0
}

/// `(1/n) Σ x²` without centring.
pub fn second_moment(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Pearson kurtosis `m4 / m2²` (3 for a Gaussian).
pub fn kurtosis(x: &[f64]) -> f64 {
    let (m2, m4) = central_2_4(x);
    m4 / (m2 * m2)
}

/// Bias-corrected sample excess kurtosis (G2).
pub fn excess_kurtosis(x: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    if x.len() < 4 {
        return Err(Error::Insufficient(format!("excess kurtosis needs 4 samples, got {}", x.len())));
    }
    let g2 = kurtosis(x) - 3.0;
    Ok((n - 1.0) / ((n - 2.0) * (n - 3.0)) * ((n + 1.0) * g2 + 6.0))
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// One-sample KS statistic against a continuous cdf, evaluated at every sample.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let s = sorted(samples);
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    })
}

/// Upper bound on the one-sample KS statistic for an expensive cdf.
///
/// The cdf is evaluated at every `stride`-th order statistic. Between two
/// evaluated points monotonicity bounds the cdf, so the returned value is at
/// least the exact statistic and exceeds it by at most the largest cdf
/// increment across one stride.
pub fn ks_statistic_strided<F: Fn(f64) -> Result<f64>>(sorted: &[f64], stride: usize, cdf: F) -> Result<f64> {
    let n = sorted.len();
    if n == 0 {
        return Err(Error::Insufficient("KS statistic of an empty sample".into()));
    }
    let stride = stride.max(1);
    let nf = n as f64;
    let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
    if *idx.last().unwrap() != n - 1 {
        idx.push(n - 1);
    }
    let vals: Vec<f64> = idx.iter().map(|&i| cdf(sorted[i])).collect::<Result<_>>()?;
    let mut d = 0.0f64;
    let mut prev_f = 0.0;
    let mut prev_i = 0usize;
    for (&i, &f) in idx.iter().zip(&vals) {
        // samples prev_i..=i have cdf in [prev_f, f]
        d = d.max(f - prev_i as f64 / nf).max((i + 1) as f64 / nf - prev_f);
        prev_f = f;
        prev_i = i;
    }
    Ok(d)
}

/// Two-sample KS statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let a = sorted(a);
    let b = sorted(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic Kolmogorov tail probability `P(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Two-sample KS p-value with the usual effective-size correction.
pub fn ks_two_sample_pvalue(d: f64, na: usize, nb: usize) -> f64 {
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let sq = ne.sqrt();
    kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d)
}
