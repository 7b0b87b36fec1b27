//! Synthetic markets with fluctuating epoch correlations.

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sample_scale, EnsembleScaleLaw, EpochKernel};
use crate::epochs::{Horizon, ReturnPanel};
use crate::error::{Error, Result};
use crate::seed::{self, stage};

/// Generator settings. The mean correlation matrix is passed separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kernel: EpochKernel,
    pub ensemble: Option<EnsembleScaleLaw>,
    pub epochs: usize,
    pub epoch_len: usize,
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self, k: usize) -> Result<()> {
        self.kernel.validate()?;
        if self.epochs == 0 || self.epoch_len == 0 {
            return Err(Error::Parameter("epochs and epoch length must be positive".into()));
        }
        if let Some(law) = self.ensemble {
            law.validate()?;
            let n = law.n();
            if n.fract() != 0.0 {
                return Err(Error::Parameter(format!("matrix-level ensemble needs integer N, got {n}")));
            }
            if (n as usize) < k {
                return Err(Error::RankDeficient { min: n, max: k as f64 });
            }
        }
        Ok(())
    }
}

fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Cholesky::new(m.clone())
        .map(|c| c.unpack())
        .ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))
}

fn check_correlation(c: &DMatrix<f64>) -> Result<()> {
    if !c.is_square() || c.nrows() == 0 {
        return Err(Error::Parameter("correlation matrix must be square and non-empty".into()));
    }
    if (c - c.transpose()).amax() > 1e-12 {
        return Err(Error::Parameter("correlation matrix is not symmetric".into()));
    }
    Ok(())
}

fn epoch_covariance<R: Rng>(chol_bar: &DMatrix<f64>, law: EnsembleScaleLaw, rng: &mut R) -> DMatrix<f64> {
    let k = chol_bar.nrows();
    let n = law.n() as usize;
    let z = DMatrix::<f64>::from_fn(k, n, |_, _| rng.sample(StandardNormal));
    let mut a = chol_bar * z;
    if let EnsembleScaleLaw::Algebraic { .. } = law {
        for mut col in a.column_iter_mut() {
            col *= sample_scale(law, rng).sqrt();
        }
    }
    (&a * a.transpose()) / n as f64
}

fn epoch_returns<R: Rng>(chol: &DMatrix<f64>, kernel: EpochKernel, len: usize, rng: &mut R) -> DMatrix<f64> {
    let k = chol.nrows();
    let z = DMatrix::<f64>::from_fn(k, len, |_, _| rng.sample(StandardNormal));
    let mut x = chol * z;
    if let EpochKernel::Algebraic { l } = kernel {
        let nu = 2.0 * l - 1.0;
        let chi = ChiSquared::new(nu).expect("validated kernel");
        for mut col in x.column_iter_mut() {
            col *= ((nu - 2.0) / chi.sample(rng)).sqrt();
        }
    }
    x
}

fn synthesize(bars: &[DMatrix<f64>], spec: &SynthSpec) -> Result<ReturnPanel> {
    let k = bars[0].nrows();
    spec.validate(k)?;
    let blocks: Vec<DMatrix<f64>> = bars
        .par_iter()
        .enumerate()
        .map(|(e, bar)| {
            let chol_bar = cholesky(bar, "mean correlation matrix")?;
            let chol = match spec.ensemble {
                None => chol_bar,
                Some(law) => {
                    let mut rng = seed::rng(spec.seed, stage::EPOCH_CORRELATION, e as u64);
                    cholesky(&epoch_covariance(&chol_bar, law, &mut rng), "epoch correlation matrix")?
                }
            };
            let mut rng = seed::rng(spec.seed, stage::EPOCH_RETURNS, e as u64);
            Ok(epoch_returns(&chol, spec.kernel, spec.epoch_len, &mut rng))
        })
        .collect::<Result<_>>()?;
    let t = spec.epochs * spec.epoch_len;
    let mut returns = DMatrix::zeros(k, t);
    for (e, b) in blocks.iter().enumerate() {
        returns.columns_mut(e * spec.epoch_len, spec.epoch_len).copy_from(b);
    }
    let mut panel = ReturnPanel::new(
        (0..k).map(|i| format!("S{i:03}")).collect(),
        returns,
        Horizon::Steps(1),
        format!("synth-{}", spec.seed),
    )?;
    panel.epochs = (0..spec.epochs).map(|e| e * spec.epoch_len..(e + 1) * spec.epoch_len).collect();
    Ok(panel)
}

/// Draws `spec.epochs` epochs around a fixed mean correlation matrix.
pub fn synthesize_panel(c_bar: &DMatrix<f64>, spec: &SynthSpec) -> Result<ReturnPanel> {
    check_correlation(c_bar)?;
    synthesize(&vec![c_bar.clone(); spec.epochs.max(1)], spec)
}

/// Like [`synthesize_panel`], but the mean correlation matrix moves linearly
/// from `start` at the first epoch to `end` at the last.
pub fn synthesize_drifting(start: &DMatrix<f64>, end: &DMatrix<f64>, spec: &SynthSpec) -> Result<ReturnPanel> {
    check_correlation(start)?;
    check_correlation(end)?;
    if start.shape() != end.shape() {
        return Err(Error::Parameter("start and end matrices differ in size".into()));
    }
    let steps = spec.epochs.max(1);
    let bars: Vec<DMatrix<f64>> = (0..steps)
        .map(|e| {
            let w = if steps == 1 { 0.0 } else { e as f64 / (steps - 1) as f64 };
            start * (1.0 - w) + end * w
        })
        .collect();
    synthesize(&bars, spec)
}

/// `B B† + diag(1 - |b_i|²)` for a K×F loading matrix with row norms below one.
pub fn factor_correlation(loadings: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut c = loadings * loadings.transpose();
    for i in 0..c.nrows() {
        let common = c[(i, i)];
        if common >= 1.0 {
            return Err(Error::Parameter(format!("loading row {i} has norm ≥ 1")));
        }
        c[(i, i)] = 1.0;
    }
    Ok(c)
}

/// Equicorrelation matrix with off-diagonal `rho`.
pub fn one_factor_correlation(k: usize, rho: f64) -> Result<DMatrix<f64>> {
    if !(rho > -1.0 / (k.max(2) - 1) as f64 && rho < 1.0) {
        return Err(Error::Parameter(format!("equicorrelation {rho} is not positive definite for K = {k}")));
    }
    factor_correlation(&DMatrix::from_element(k, 1, rho.abs().sqrt())).map(|mut c| {
        if rho < 0.0 {
            c.apply(|v| {
                if *v != 1.0 {
                    *v = -v.abs()
                }
            });
        }
        c
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_corr(x: &DMatrix<f64>) -> DMatrix<f64> {
        let t = x.ncols() as f64;
        let mean = x.column_mean();
        let mut c = x.clone();
        for mut col in c.column_iter_mut() {
            col -= &mean;
        }
        let cov = (&c * c.transpose()) / t;
        let d = cov.diagonal().map(|v| 1.0 / v.sqrt());
        DMatrix::from_fn(cov.nrows(), cov.ncols(), |i, j| cov[(i, j)] * d[i] * d[j])
    }

    fn spec(ensemble: Option<EnsembleScaleLaw>, epochs: usize, len: usize) -> SynthSpec {
        SynthSpec {
            kernel: EpochKernel::Gaussian,
            ensemble,
            epochs,
            epoch_len: len,
            seed: 11,
        }
    }

    #[test]
    fn stationary_correlation_converges() {
        let k = 4;
        let c = one_factor_correlation(k, 0.4).unwrap();
        let p = synthesize_panel(&c, &spec(None, 1, 10_000 * k)).unwrap();
        assert!((sample_corr(&p.returns) - c).norm() < 0.05);
    }

    #[test]
    fn identity_null() {
        let t = 20_000;
        let p = synthesize_panel(&DMatrix::identity(2, 2), &spec(None, 1, t)).unwrap();
        assert!(sample_corr(&p.returns)[(0, 1)].abs() < 3.0 / (t as f64).sqrt());
    }

    #[test]
    fn ensemble_fluctuation_decreases_in_n() {
        let k = 5;
        let c = one_factor_correlation(k, 0.3).unwrap();
        let spread = |n: f64| {
            let p = synthesize_panel(&c, &spec(Some(EnsembleScaleLaw::Gaussian { n }), 40, 2000)).unwrap();
            let vals: Vec<f64> = p
                .epochs
                .iter()
                .map(|r| sample_corr(&p.returns.columns_range(r.clone()).into_owned())[(0, 1)])
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64
        };
        assert!(spread((k + 5) as f64) > spread(200.0));
    }

    #[test]
    fn rank_error_for_small_n() {
        let c = DMatrix::identity(6, 6);
        let err = synthesize_panel(&c, &spec(Some(EnsembleScaleLaw::Gaussian { n: 5.0 }), 1, 10)).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn deterministic_and_worker_independent() {
        let c = one_factor_correlation(3, 0.2).unwrap();
        let mut s = spec(Some(EnsembleScaleLaw::Algebraic { n: 8.0, big_l: 9.0 }), 6, 50);
        s.kernel = EpochKernel::Algebraic { l: 2.5 };
        let a = synthesize_panel(&c, &s).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| synthesize_panel(&c, &s).unwrap());
        assert_eq!(a.returns, b.returns);
        assert_eq!(a.epochs.len(), 6);
    }

    #[test]
    fn factor_matrix() {
        let b = DMatrix::from_row_slice(2, 1, &[0.6, 0.5]);
        let c = factor_correlation(&b).unwrap();
        assert_eq!(c[(0, 0)], 1.0);
        assert!((c[(0, 1)] - 0.3).abs() < 1e-15);
        assert!(factor_correlation(&DMatrix::from_element(1, 1, 1.0)).is_err());
        let neg = one_factor_correlation(2, -0.5).unwrap();
        assert!((neg[(0, 1)] + 0.5).abs() < 1e-15);
    }
}
