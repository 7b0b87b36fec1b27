//! Correlation matrices, eigendecomposition, Mahalanobis forms and
//! Ledoit–Wolf shrinkage.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::epochs::{NormMode, NormalizedPanel, SliceId};
use crate::error::{Error, Result};

/// Relative eigenvalue floor for a full-rank matrix.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixKind {
    /// K×K correlation of time series.
    Time,
    /// T×T correlation of position series.
    Position,
    Covariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub kind: MatrixKind,
    pub values: DMatrix<f64>,
    pub slice: SliceId,
}

impl CorrelationMatrix {
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Rescales to unit diagonal.
    pub fn to_correlation(&self) -> Result<CorrelationMatrix> {
        let d = self.values.diagonal();
        if d.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Numerical("covariance has a non-positive diagonal entry".into()));
        }
        let s = d.map(|v| 1.0 / v.sqrt());
        let n = self.dim();
        let mut values = DMatrix::from_fn(n, n, |i, j| self.values[(i, j)] * s[i] * s[j]);
        values.fill_diagonal(1.0);
        Ok(CorrelationMatrix {
            kind: if self.kind == MatrixKind::Position {
                MatrixKind::Position
            } else {
                MatrixKind::Time
            },
            values,
            slice: self.slice.clone(),
        })
    }
}

fn gram_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = x * x.transpose() / x.ncols() as f64;
    symmetrize(&mut c);
    c
}

fn symmetrize(c: &mut DMatrix<f64>) {
    let n = c.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
}

/// `C = (1/T) M M†` of a time-series-normalized panel.
pub fn time_correlation(panel: &NormalizedPanel) -> Result<CorrelationMatrix> {
    panel.expect_mode(NormMode::TimeSeries)?;
    let mut values = gram_rows(&panel.values);
    // exact by construction up to rounding
    values.fill_diagonal(1.0);
    Ok(CorrelationMatrix {
        kind: MatrixKind::Time,
        values,
        slice: panel.slice.clone(),
    })
}

/// `D = (1/K) E† E` of a position-normalized panel.
pub fn position_correlation(panel: &NormalizedPanel) -> Result<CorrelationMatrix> {
    panel.expect_mode(NormMode::PositionSeries)?;
    let mut values = panel.values.transpose() * &panel.values / panel.k() as f64;
    symmetrize(&mut values);
    values.fill_diagonal(1.0);
    Ok(CorrelationMatrix {
        kind: MatrixKind::Position,
        values,
        slice: panel.slice.clone(),
    })
}

/// `Σ = (1/T) G₀ G₀†` of a de-meaned panel.
pub fn covariance(panel: &NormalizedPanel) -> Result<CorrelationMatrix> {
    panel.expect_mode(NormMode::MeanOnly)?;
    Ok(CorrelationMatrix {
        kind: MatrixKind::Covariance,
        values: gram_rows(&panel.values),
        slice: panel.slice.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    /// Ascending.
    pub eigenvalues: DVector<f64>,
    /// Column k belongs to eigenvalue k.
    pub eigenvectors: DMatrix<f64>,
    pub kind: MatrixKind,
    pub slice: SliceId,
    pub full_rank: bool,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn require_full_rank(&self) -> Result<()> {
        if self.full_rank {
            Ok(())
        } else {
            Err(Error::RankDeficient {
                min: self.eigenvalues[0],
                max: self.eigenvalues[self.dim() - 1],
            })
        }
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let u = &self.eigenvectors;
        u * DMatrix::from_diagonal(&self.eigenvalues) * u.transpose()
    }

    /// Identifier of the basis, used in reports.
    pub fn basis_id(&self) -> String {
        format!("{:?}:{}", self.kind, self.slice).to_lowercase()
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Symmetric eigendecomposition with ascending eigenvalues and a fixed sign
/// convention: the first largest-magnitude entry of every eigenvector is
/// positive. Eigenvalues equal to within 1e-12 of the spectral radius are
/// ordered by their eigenvectors, lexicographically.
pub fn eigendecompose(matrix: &CorrelationMatrix) -> Result<SpectralDecomposition> {
    let n = matrix.dim();
    if n == 0 || !matrix.values.is_square() {
        return Err(Error::Parameter("eigendecomposition needs a non-empty square matrix".into()));
    }
    if matrix.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(matrix.values.clone());
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let lead = v
                .iter()
                .enumerate()
                .fold((0usize, 0.0f64), |best, (i, x)| if x.abs() > best.1 { (i, x.abs()) } else { best })
                .0;
            if v[lead] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            (eig.eigenvalues[k], v)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let radius = pairs.iter().fold(0.0f64, |m, p| m.max(p.0.abs()));
    let tie = 1e-12 * radius.max(f64::MIN_POSITIVE);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && pairs[end].0 - pairs[end - 1].0 <= tie {
            end += 1;
        }
        pairs[start..end].sort_by(|a, b| lexicographic(&a.1, &b.1));
        start = end;
    }
    let eigenvalues = DVector::from_iterator(n, pairs.iter().map(|p| p.0));
    let eigenvectors = DMatrix::from_fn(n, n, |i, k| pairs[k].1[i]);
    let (min, max) = (eigenvalues[0], eigenvalues[n - 1]);
    Ok(SpectralDecomposition {
        full_rank: max > 0.0 && min > RANK_TOLERANCE * max,
        eigenvalues,
        eigenvectors,
        kind: matrix.kind,
        slice: matrix.slice.clone(),
    })
}

/// `r† C⁻¹ r` as `Σ_k r̄_k² / Λ_k` with `r̄ = U† r`.
pub fn mahalanobis(r: &DVector<f64>, spec: &SpectralDecomposition) -> Result<f64> {
    spec.require_full_rank()?;
    if r.len() != spec.dim() {
        return Err(Error::Parameter(format!("vector of length {} for a {}-dim basis", r.len(), spec.dim())));
    }
    let rbar = spec.eigenvectors.tr_mul(r);
    Ok(rbar.iter().zip(spec.eigenvalues.iter()).map(|(x, l)| x * x / l).sum())
}

/// Shrunk covariance with the intensity that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Shrinkage {
    pub covariance: CorrelationMatrix,
    pub intensity: f64,
}

impl Shrinkage {
    pub fn correlation(&self) -> Result<CorrelationMatrix> {
        self.covariance.to_correlation()
    }
}

/// Ledoit–Wolf shrinkage toward `μI`, `μ = tr S / K`.
///
/// Pass `intensity` to bypass the estimate; it is clipped to [0, 1].
pub fn ledoit_wolf(panel: &NormalizedPanel, intensity: Option<f64>) -> Result<Shrinkage> {
    panel.expect_mode(NormMode::MeanOnly)?;
    let (k, t) = panel.values.shape();
    if t < 2 {
        return Err(Error::Insufficient("shrinkage needs at least two columns".into()));
    }
    let s = gram_rows(&panel.values);
    let kf = k as f64;
    let mu = s.trace() / kf;
    let target = DMatrix::<f64>::identity(k, k) * mu;
    let delta = match intensity {
        Some(d) => d.clamp(0.0, 1.0),
        None => {
            let d2 = (&s - &target).norm_squared() / kf;
            if d2 == 0.0 {
                0.0
            } else {
                let s_norm2 = s.norm_squared();
                let mut acc = 0.0;
                for x in panel.values.column_iter() {
                    let xx = x.norm_squared();
                    let xsx = (&s * x).dot(&x);
                    // ‖x x† − S‖²_F
                    acc += xx * xx - 2.0 * xsx + s_norm2;
                }
                let b2_bar = acc / (t as f64 * t as f64) / kf;
                (b2_bar.min(d2) / d2).clamp(0.0, 1.0)
            }
        }
    };
    let mut values = &s * (1.0 - delta) + target * delta;
    symmetrize(&mut values);
    Ok(Shrinkage {
        covariance: CorrelationMatrix {
            kind: MatrixKind::Covariance,
            values,
            slice: panel.slice.clone(),
        },
        intensity: delta,
    })
}
