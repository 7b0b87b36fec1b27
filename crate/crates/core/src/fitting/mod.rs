//! Least-squares fits of model densities to histograms, normalized χ²,
//! epoch-parameter averaging and tail exponents.
//!
//! Every free parameter is mapped onto `[0, 1]` (log-spaced inside its
//! bounds), so the optimizers only ever see a unit box and boundary hits are
//! simply coordinates at 0 or 1.

pub mod optimize;
mod tails;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::density::EmpiricalDensity;
use crate::epochs::Horizon;
use crate::error::{Error, Result};
use crate::models::{EpochKernel, Family, ModelDistribution};

pub use tails::{tail_exponent, tail_exponent_binned, TailFit, TailSide};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Lin,
    Log,
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Lin => "lin",
            Scale::Log => "log",
        })
    }
}

impl std::str::FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lin" | "linear" => Ok(Scale::Lin),
            "log" | "ln" => Ok(Scale::Log),
            other => Err(Error::Parameter(format!("unknown scale {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Upper bound on the kernel shape; the lower bound 3/2 is open.
    pub l_max: f64,
    pub n_min: f64,
    pub n_max: f64,
    /// `L` is kept above `N/2 + l_gap`.
    pub l_gap: f64,
    pub big_l_max: f64,
    /// Bins with fewer samples are left out of log-scale fits.
    pub min_log_count: u64,
    /// Objective evaluations per fit.
    pub max_evaluations: usize,
    /// Weight residuals by their Poisson variance.
    pub weighted: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            l_max: 50.0,
            n_min: 0.1,
            n_max: 1000.0,
            l_gap: 1.01,
            big_l_max: 1000.0,
            min_log_count: 10,
            max_evaluations: 1500,
            weighted: false,
        }
    }
}

/// Smallest admissible `l - 3/2` and `L - N/2 - l_gap`.
const OPEN_GAP: f64 = 1e-3;
const EDGE: f64 = 1e-6;

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.l_max > 1.5 + OPEN_GAP
            && self.n_min > 0.0
            && self.n_max > self.n_min
            && self.l_gap > 1.0
            && self.big_l_max > 0.5 * self.n_max + self.l_gap + OPEN_GAP
            && self.max_evaluations > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("inconsistent fit bounds {self:?}")))
        }
    }

    fn l_from_unit(&self, v: f64) -> f64 {
        1.5 + log_lerp(OPEN_GAP, self.l_max - 1.5, v)
    }

    fn n_from_unit(&self, v: f64) -> f64 {
        log_lerp(self.n_min, self.n_max, v)
    }

    fn big_l_from_unit(&self, n: f64, w: f64) -> f64 {
        let floor = 0.5 * n + self.l_gap;
        floor + log_lerp(OPEN_GAP, self.big_l_max - floor, w)
    }
}

fn log_lerp(lo: f64, hi: f64, v: f64) -> f64 {
    if v >= 1.0 {
        return hi;
    }
    (lo.ln() + v.clamp(0.0, 1.0) * (hi.ln() - lo.ln())).exp()
}

/// What was fitted: the epoch kernel or one of the interval families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitKind {
    Epoch,
    #[serde(rename = "GG")]
    GG,
    #[serde(rename = "GA")]
    GA,
    #[serde(rename = "AG")]
    AG,
    #[serde(rename = "AA")]
    AA,
}

impl FitKind {
    pub fn family(self) -> Option<Family> {
        match self {
            FitKind::Epoch => None,
            FitKind::GG => Some(Family::GG),
            FitKind::GA => Some(Family::GA),
            FitKind::AG => Some(Family::AG),
            FitKind::AA => Some(Family::AA),
        }
    }

    fn from_family(f: Family) -> Self {
        match f {
            Family::GG => FitKind::GG,
            Family::GA => FitKind::GA,
            Family::AG => FitKind::AG,
            Family::AA => FitKind::AA,
        }
    }

    pub fn free_params(self) -> usize {
        self.family().map_or(1, Family::free_params)
    }
}

impl fmt::Display for FitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family() {
            None => f.write_str("epoch"),
            Some(fam) => fam.fmt(f),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryFlags {
    pub l: bool,
    pub n: bool,
    pub big_l: bool,
}

impl BoundaryFlags {
    pub fn any(&self) -> bool {
        self.l || self.n || self.big_l
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kind: FitKind,
    pub scale: Scale,
    /// Kernel shape: fitted for epochs, held fixed for AG and AA.
    pub l: Option<f64>,
    #[serde(rename = "N")]
    pub n: Option<f64>,
    #[serde(rename = "L")]
    pub big_l: Option<f64>,
    pub chi2_lin: f64,
    /// Absent when fewer than `params + 2` bins meet the log-fit count cut.
    pub chi2_ln: Option<f64>,
    /// Bins entering the objective of `scale`.
    pub bins_used: usize,
    pub boundary: BoundaryFlags,
    pub evaluations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<Horizon>,
}

impl FitResult {
    pub fn model(&self) -> Result<ModelDistribution> {
        match self.kind.family() {
            None => ModelDistribution::kernel_only(EpochKernel::algebraic(self.l.unwrap_or(f64::NAN))?),
            Some(f) => f.model(self.l, self.n.unwrap_or(f64::NAN), self.big_l),
        }
    }

    /// The value of the fitted scale's objective.
    pub fn chi2(&self) -> Option<f64> {
        match self.scale {
            Scale::Lin => Some(self.chi2_lin),
            Scale::Log => self.chi2_ln,
        }
    }
}

/// Histogram prepared for repeated objective evaluation. The model is even,
/// so it is evaluated once per distinct `|x|`.
struct Target {
    abs_x: Vec<f64>,
    half_width: Vec<f64>,
    /// (distinct-abscissa index, observed value, weight) per bin in the objective.
    terms: Vec<(usize, f64, f64)>,
    scale: Scale,
}

impl Target {
    fn new(density: &EmpiricalDensity, scale: Scale, config: &FitConfig) -> Self {
        let centers = density.centers();
        let widths = density.widths();
        let mut abs_x: Vec<f64> = Vec::new();
        let mut half_width: Vec<f64> = Vec::new();
        let mut order: Vec<usize> = (0..centers.len()).collect();
        order.sort_by(|&a, &b| centers[a].abs().total_cmp(&centers[b].abs()));
        let mut slot = vec![0usize; centers.len()];
        for &b in &order {
            let a = centers[b].abs();
            match abs_x.last() {
                Some(&last) if (a - last).abs() <= 1e-12 * a.max(1e-300) => {}
                _ => {
                    abs_x.push(a);
                    half_width.push(0.5 * widths[b]);
                }
            }
            slot[b] = abs_x.len() - 1;
        }
        let total = density.samples.max(1) as f64;
        let mut terms = Vec::new();
        for b in 0..centers.len() {
            let count = density.counts[b];
            let p = density.density[b];
            match scale {
                Scale::Lin => {
                    let w = if config.weighted {
                        let sd = (count.max(1) as f64).sqrt() / (total * widths[b]);
                        1.0 / (sd * sd)
                    } else {
                        1.0
                    };
                    terms.push((slot[b], p, w));
                }
                Scale::Log => {
                    if count >= config.min_log_count && p > 0.0 {
                        let w = if config.weighted { count as f64 } else { 1.0 };
                        terms.push((slot[b], p.ln(), w));
                    }
                }
            }
        }
        Self {
            abs_x,
            half_width,
            terms,
            scale,
        }
    }

    fn model_values(&self, model: &ModelDistribution) -> Result<Vec<f64>> {
        self.abs_x
            .iter()
            .zip(&self.half_width)
            .map(|(&x, &h)| {
                let v = model.pdf(x)?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    // integrable singularity at the origin: use the bin average
                    Ok((model.cdf(x + h)? - model.cdf(x - h)?) / (2.0 * h))
                }
            })
            .collect()
    }

    fn residual_sum(&self, values: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|&(i, obs, w)| {
                let m = match self.scale {
                    Scale::Lin => values[i],
                    Scale::Log => values[i].ln(),
                };
                w * (obs - m) * (obs - m)
            })
            .sum()
    }

    fn objective(&self, model: Result<ModelDistribution>) -> f64 {
        let r = model
            .and_then(|m| self.model_values(&m))
            .map(|v| self.residual_sum(&v))
            .unwrap_or(f64::INFINITY);
        if r.is_nan() {
            f64::INFINITY
        } else {
            r
        }
    }
}

/// Model density at every bin centre, falling back to the bin average where
/// the density is singular.
pub fn bin_curve(model: &ModelDistribution, density: &EmpiricalDensity) -> Result<Vec<f64>> {
    let target = Target::new(density, Scale::Lin, &FitConfig::default());
    let values = target.model_values(model)?;
    Ok(target.terms.iter().map(|&(i, _, _)| values[i]).collect())
}

/// Normalized χ² of a model curve (evaluated at the bin centres).
pub fn chi_squared(density: &EmpiricalDensity, curve: &[f64], scale: Scale, n_params: usize, config: &FitConfig) -> Result<f64> {
    if curve.len() != density.bins() {
        return Err(Error::Parameter(format!("{} curve values for {} bins", curve.len(), density.bins())));
    }
    let mut sum = 0.0;
    let mut bins = 0usize;
    for b in 0..density.bins() {
        let p = density.density[b];
        match scale {
            Scale::Lin => {
                sum += (p - curve[b]).powi(2);
                bins += 1;
            }
            Scale::Log => {
                if density.counts[b] >= config.min_log_count && p > 0.0 {
                    sum += (p.ln() - curve[b].ln()).powi(2);
                    bins += 1;
                }
            }
        }
    }
    if bins < n_params + 2 {
        return Err(Error::Insufficient(format!(
            "{bins} usable bins on the {scale} scale, need {}",
            n_params + 2
        )));
    }
    Ok(sum / (bins - n_params) as f64)
}

fn finish(
    density: &EmpiricalDensity,
    kind: FitKind,
    scale: Scale,
    (l, n, big_l): (Option<f64>, Option<f64>, Option<f64>),
    boundary: BoundaryFlags,
    evaluations: usize,
    config: &FitConfig,
) -> Result<FitResult> {
    let mut result = FitResult {
        kind,
        scale,
        l,
        n,
        big_l,
        chi2_lin: 0.0,
        chi2_ln: None,
        bins_used: 0,
        boundary,
        evaluations,
        horizon: None,
    };
    let curve = bin_curve(&result.model()?, density)?;
    let p = kind.free_params();
    result.chi2_lin = chi_squared(density, &curve, Scale::Lin, p, config)?;
    result.chi2_ln = chi_squared(density, &curve, Scale::Log, p, config).ok();
    result.bins_used = Target::new(density, scale, config).terms.len();
    if scale == Scale::Log && result.chi2_ln.is_none() {
        return Err(Error::Insufficient("too few bins pass the log-fit count cut".into()));
    }
    Ok(result)
}

fn usable(density: &EmpiricalDensity, target: &Target, params: usize) -> Result<()> {
    if target.terms.len() < params + 2 {
        return Err(Error::Insufficient(format!(
            "{} usable bins in {:?}, need {}",
            target.terms.len(),
            density.label,
            params + 2
        )));
    }
    Ok(())
}

fn on_edge(v: f64) -> bool {
    v <= EDGE || v >= 1.0 - EDGE
}

/// Fits the algebraic epoch kernel shape `l`.
pub fn fit_epoch(density: &EmpiricalDensity, scale: Scale, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let target = Target::new(density, scale, config);
    usable(density, &target, 1)?;
    let objective = |v: f64| target.objective(EpochKernel::algebraic(config.l_from_unit(v)).and_then(ModelDistribution::kernel_only));
    let m = optimize::grid_golden(objective, 41, 1e-10, config.max_evaluations);
    let v = m.x[0];
    finish(
        density,
        FitKind::Epoch,
        scale,
        (Some(config.l_from_unit(v)), None, None),
        BoundaryFlags {
            l: on_edge(v),
            ..Default::default()
        },
        m.evaluations,
        config,
    )
}

/// Fits an interval family. `l_fixed` is required for AG and AA and ignored
/// otherwise.
pub fn fit_interval(
    density: &EmpiricalDensity,
    family: Family,
    l_fixed: Option<f64>,
    scale: Scale,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    let l = if family.algebraic_kernel() {
        let l = l_fixed.ok_or_else(|| Error::Parameter(format!("{family} needs a fixed kernel shape")))?;
        EpochKernel::algebraic(l)?;
        Some(l)
    } else {
        None
    };
    let target = Target::new(density, scale, config);
    usable(density, &target, family.free_params())?;
    let kind = FitKind::from_family(family);
    if family.algebraic_ensemble() {
        let objective = |p: &[f64]| {
            let n = config.n_from_unit(p[0]);
            target.objective(family.model(l, n, Some(config.big_l_from_unit(n, p[1]))))
        };
        let m = optimize::grid_simplex(objective, 13, 1e-9, config.max_evaluations);
        let n = config.n_from_unit(m.x[0]);
        finish(
            density,
            kind,
            scale,
            (l, Some(n), Some(config.big_l_from_unit(n, m.x[1]))),
            BoundaryFlags {
                l: false,
                n: on_edge(m.x[0]),
                big_l: on_edge(m.x[1]),
            },
            m.evaluations,
            config,
        )
    } else {
        let objective = |v: f64| target.objective(family.model(l, config.n_from_unit(v), None));
        let m = optimize::grid_golden(objective, 41, 1e-10, config.max_evaluations);
        finish(
            density,
            kind,
            scale,
            (l, Some(config.n_from_unit(m.x[0])), None),
            BoundaryFlags {
                n: on_edge(m.x[0]),
                ..Default::default()
            },
            m.evaluations,
            config,
        )
    }
}

/// Arithmetic means of epoch fit parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochAverage {
    pub scale: Scale,
    pub epochs: usize,
    pub l_mean: f64,
    pub chi2_lin_mean: f64,
    pub chi2_ln_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<Horizon>,
}

pub fn average_epoch_params(results: &[FitResult]) -> Result<EpochAverage> {
    let first = results
        .first()
        .ok_or_else(|| Error::Insufficient("no epoch fits to average".into()))?;
    for r in results {
        if r.kind != FitKind::Epoch {
            return Err(Error::Parameter(format!("cannot average a {} fit with epoch fits", r.kind)));
        }
        if r.scale != first.scale || r.horizon != first.horizon {
            return Err(Error::Parameter("epoch fits mix scales or horizons".into()));
        }
    }
    let n = results.len() as f64;
    let l_mean = results.iter().map(|r| r.l.unwrap_or(f64::NAN)).sum::<f64>() / n;
    let chi2_lin_mean = results.iter().map(|r| r.chi2_lin).sum::<f64>() / n;
    let chi2_ln_mean = results
        .iter()
        .map(|r| r.chi2_ln)
        .sum::<Option<f64>>()
        .map(|s| s / n);
    Ok(EpochAverage {
        scale: first.scale,
        epochs: results.len(),
        l_mean,
        chi2_lin_mean,
        chi2_ln_mean,
        horizon: first.horizon,
    })
}
