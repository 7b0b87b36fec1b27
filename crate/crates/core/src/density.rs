//! Histogram density estimates.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

pub const MIN_SAMPLES: usize = 100;

/// How to lay out bins. All rules produce equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum BinningRule {
    Uniform { lo: f64, hi: f64, bins: usize },
    /// Freedman–Diaconis width over a clip range.
    FreedmanDiaconis { lo: f64, hi: f64 },
    /// Symmetric range `±min(1.05 max|x|, cap)` with a fixed odd bin count.
    Symmetric { cap: f64, bins: usize },
}

impl Default for BinningRule {
    fn default() -> Self {
        BinningRule::Symmetric { cap: 50.0, bins: 201 }
    }
}

impl BinningRule {
    fn layout(&self, samples: &[f64]) -> Result<(f64, f64, usize)> {
        let (lo, hi, bins) = match *self {
            BinningRule::Uniform { lo, hi, bins } => (lo, hi, bins),
            BinningRule::Symmetric { cap, bins } => {
                let q = (1.05 * samples.iter().fold(0.0f64, |m, v| m.max(v.abs()))).min(cap);
                (-q, q, bins)
            }
            BinningRule::FreedmanDiaconis { lo, hi } => {
                let s = stats::sorted(samples);
                let iqr = stats::quantile_sorted(&s, 0.75) - stats::quantile_sorted(&s, 0.25);
                let width = 2.0 * iqr / (s.len() as f64).cbrt();
                let bins = if width > 0.0 { ((hi - lo) / width).ceil().max(1.0) as usize } else { 1 };
                (lo, hi, bins.min(1_000_000))
            }
        };
        if !(lo < hi) || bins == 0 || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Parameter(format!("invalid bin layout [{lo}, {hi}] with {bins} bins")));
        }
        Ok((lo, hi, bins))
    }
}

/// Normalized histogram. Densities integrate to one over the in-range samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDensity {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
    pub counts: Vec<u64>,
    /// Samples that fell inside the bins.
    pub samples: u64,
    /// Samples outside the bin range.
    pub outside: u64,
    pub label: String,
}

impl EmpiricalDensity {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn integral(&self) -> f64 {
        self.density.iter().zip(self.widths()).map(|(d, w)| d * w).sum()
    }

    /// Builds a density whose values are exactly `pdf` at the bin centres,
    /// with counts consistent with `n` notional samples.
    pub fn from_curve(edges: Vec<f64>, values: Vec<f64>, n: u64, label: &str) -> Result<Self> {
        if edges.len() != values.len() + 1 || values.is_empty() {
            return Err(Error::Parameter("need one value per bin".into()));
        }
        let counts: Vec<u64> = values
            .iter()
            .zip(edges.windows(2))
            .map(|(p, w)| (p * (w[1] - w[0]) * n as f64).round() as u64)
            .collect();
        Ok(Self {
            samples: counts.iter().sum(),
            edges,
            density: values,
            counts,
            outside: 0,
            label: label.into(),
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin_left", "bin_right", "density", "count"])?;
        for b in 0..self.bins() {
            out.write_record(&[
                fmt_f64(self.edges[b]),
                fmt_f64(self.edges[b + 1]),
                fmt_f64(self.density[b]),
                self.counts[b].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the CSV layout written by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: Read>(r: R, label: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["bin_left", "bin_right", "density", "count"] {
            return Err(Error::Schema(format!("unexpected density header {header:?}")));
        }
        let mut edges = Vec::new();
        let mut density = Vec::new();
        let mut counts = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |j: usize| -> Result<f64> {
                rec[j].trim().parse().map_err(|_| Error::Data(format!("row {}: bad number {:?}", i + 1, &rec[j])))
            };
            let (l, r) = (num(0)?, num(1)?);
            if let Some(&last) = edges.last() {
                if (l - last as f64).abs() > 1e-9 * l.abs().max(1.0) {
                    return Err(Error::Data(format!("row {}: bins are not contiguous", i + 1)));
                }
            } else {
                edges.push(l);
            }
            edges.push(r);
            density.push(num(2)?);
            counts.push(rec[3].trim().parse().map_err(|_| Error::Data(format!("row {}: bad count", i + 1)))?);
        }
        if density.is_empty() {
            return Err(Error::Insufficient("density file has no bins".into()));
        }
        Ok(Self {
            samples: counts.iter().sum(),
            edges,
            density,
            counts,
            outside: 0,
            label: label.into(),
        })
    }
}

/// Shortest round-trip representation; keeps CSV output byte-stable.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn estimate_density(samples: &[f64], rule: &BinningRule, label: &str) -> Result<EmpiricalDensity> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::Insufficient(format!(
            "density estimate needs {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite sample".into()));
    }
    if samples.iter().all(|v| *v == samples[0]) {
        return Err(Error::DegenerateSupport(samples.len()));
    }
    let (lo, hi, bins) = rule.layout(samples)?;
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + i as f64 * width })
        .collect();
    let mut counts = vec![0u64; bins];
    let mut outside = 0u64;
    for &x in samples {
        if x < lo || x > hi {
            outside += 1;
            continue;
        }
        let mut b = (((x - lo) / width) as usize).min(bins - 1);
        // guard against rounding at interior edges
        if x < edges[b] {
            b -= 1;
        } else if b + 1 < bins && x >= edges[b + 1] {
            b += 1;
        }
        counts[b] += 1;
    }
    let inside: u64 = counts.iter().sum();
    if inside == 0 {
        return Err(Error::Insufficient("no samples inside the bin range".into()));
    }
    let density = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(&c, w)| c as f64 / (inside as f64 * (w[1] - w[0])))
        .collect();
    Ok(EmpiricalDensity {
        edges,
        density,
        counts,
        samples: inside,
        outside,
        label: label.into(),
    })
}
