//! Rotation into the eigenbasis, rescaling and aggregation.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::density::{estimate_density, BinningRule, EmpiricalDensity};
use crate::epochs::{NormalizedPanel, SliceId};
use crate::error::{Error, Result};
use crate::spectra::SpectralDecomposition;

/// Subpools smaller than this are left out of per-eigenvector reports.
pub const MIN_SUBPOOL: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct RotatedPanel {
    /// `r̄ = U† r`, one row per eigenvector in ascending eigenvalue order.
    pub rotated: DMatrix<f64>,
    /// Row k of `rotated` divided by `√Λ_k`.
    pub rescaled: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub slice: SliceId,
    pub basis: String,
}

impl RotatedPanel {
    pub fn k(&self) -> usize {
        self.rotated.nrows()
    }

    pub fn t(&self) -> usize {
        self.rotated.ncols()
    }
}

/// Rotates every time column of `panel` into `spec`'s eigenbasis.
///
/// The basis must come from the same slice as the data.
pub fn rotate_returns(panel: &NormalizedPanel, spec: &SpectralDecomposition) -> Result<RotatedPanel> {
    if panel.slice != spec.slice {
        return Err(Error::SliceMismatch {
            basis: spec.slice.to_string(),
            panel: panel.slice.to_string(),
        });
    }
    if panel.k() != spec.dim() {
        return Err(Error::Parameter(format!("{}-row panel for a {}-dim basis", panel.k(), spec.dim())));
    }
    spec.require_full_rank()?;
    let rotated = spec.eigenvectors.tr_mul(&panel.values);
    let mut rescaled = rotated.clone();
    for (k, mut row) in rescaled.row_iter_mut().enumerate() {
        row /= spec.eigenvalues[k].sqrt();
    }
    Ok(RotatedPanel {
        rotated,
        rescaled,
        eigenvalues: spec.eigenvalues.iter().copied().collect(),
        slice: panel.slice.clone(),
        basis: spec.basis_id(),
    })
}

/// All K·T rescaled values, eigenvector by eigenvector.
pub fn aggregate(rotated: &RotatedPanel) -> Vec<f64> {
    let mut pool = Vec::with_capacity(rotated.rescaled.len());
    for k in 0..rotated.k() {
        pool.extend(subpool(rotated, k, true));
    }
    pool
}

/// Row `k` of the rotated (or rescaled) panel.
pub fn subpool(rotated: &RotatedPanel, k: usize, rescaled: bool) -> Vec<f64> {
    let m = if rescaled { &rotated.rescaled } else { &rotated.rotated };
    m.row(k).iter().copied().collect()
}

/// Densities of one eigenvector direction.
#[derive(Debug)]
pub struct EigenvectorDensity {
    pub index: usize,
    pub eigenvalue: f64,
    /// `rot,k` and `rot-scal,k`; `Err` if that subpool is too small or degenerate.
    pub rotated: Result<EmpiricalDensity>,
    pub rescaled: Result<EmpiricalDensity>,
}

pub fn per_eigenvector_densities(rotated: &RotatedPanel, binning: &BinningRule) -> Vec<EigenvectorDensity> {
    (0..rotated.k())
        .into_par_iter()
        .map(|k| {
            let make = |scaled: bool| -> Result<EmpiricalDensity> {
                let pool = subpool(rotated, k, scaled);
                if pool.len() < MIN_SUBPOOL {
                    return Err(Error::Insufficient(format!("subpool {k} has {} samples", pool.len())));
                }
                let label = if scaled { format!("rot-scal,{k}") } else { format!("rot,{k}") };
                estimate_density(&pool, binning, &label)
            };
            EigenvectorDensity {
                index: k,
                eigenvalue: rotated.eigenvalues[k],
                rotated: make(false),
                rescaled: make(true),
            }
        })
        .collect()
}

/// Indices of the `n` largest eigenvalues, largest first.
pub fn largest(rotated: &RotatedPanel, n: usize) -> Vec<usize> {
    (0..rotated.k()).rev().take(n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epochs::{normalize_time_series, Horizon, ReturnPanel};
    use crate::spectra::{eigendecompose, time_correlation, CorrelationMatrix, MatrixKind};
    use nalgebra::DVector;

    fn norm(rows: Vec<Vec<f64>>) -> NormalizedPanel {
        let m = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
        let p = ReturnPanel::new((0..rows.len()).map(|i| i.to_string()).collect(), m, Horizon::Steps(1), "r").unwrap();
        normalize_time_series(&p).unwrap()
    }

    fn wavy(k: usize, t: usize) -> NormalizedPanel {
        norm((0..k)
            .map(|i| (0..t).map(|j| ((i * 7 + 3) as f64 * 0.37 * j as f64).sin() + 0.2 * (j as f64 * 1.9).cos()).collect())
            .collect())
    }

    #[test]
    fn identity_basis() {
        let n = wavy(3, 20);
        let spec = SpectralDecomposition {
            eigenvalues: DVector::from_element(3, 1.0),
            eigenvectors: DMatrix::identity(3, 3),
            kind: MatrixKind::Time,
            slice: n.slice.clone(),
            full_rank: true,
        };
        assert_eq!(rotate_returns(&n, &spec).unwrap().rotated, n.values);
    }

    #[test]
    fn trace_identity_and_counts() {
        let n = wavy(3, 4);
        let spec = eigendecompose(&time_correlation(&n).unwrap()).unwrap();
        let r = rotate_returns(&n, &spec).unwrap();
        let pool = aggregate(&r);
        assert_eq!(pool.len(), 12);
        let m2 = pool.iter().map(|v| v * v).sum::<f64>() / 12.0;
        assert!((m2 - 1.0).abs() < 1e-10);
        for k in 0..3 {
            let s = subpool(&r, k, true);
            assert!((s.iter().map(|v| v * v).sum::<f64>() / 4.0 - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn slice_mismatch() {
        let a = wavy(3, 20);
        let mut b = a.clone();
        b.slice = SliceId::new("other", 0..20);
        let spec = eigendecompose(&time_correlation(&a).unwrap()).unwrap();
        assert!(matches!(rotate_returns(&b, &spec), Err(Error::SliceMismatch { .. })));
    }

    #[test]
    fn rank_one_pair() {
        let row: Vec<f64> = (0..10).map(|j| (j as f64 * 0.9).sin()).collect();
        let n = norm(vec![row.clone(), row]);
        let c = CorrelationMatrix {
            kind: MatrixKind::Time,
            values: DMatrix::from_row_slice(2, 2, &[1.0, 1.0 - 1e-6, 1.0 - 1e-6, 1.0]),
            slice: n.slice.clone(),
        };
        let spec = eigendecompose(&c).unwrap();
        let r = rotate_returns(&n, &spec).unwrap();
        assert!(r.rotated.row(0).amax() < 1e-12);
        // the exact rank-one matrix is refused
        let exact = eigendecompose(&time_correlation(&n).unwrap()).unwrap();
        assert!(matches!(rotate_returns(&n, &exact), Err(Error::RankDeficient { .. })));
    }
}
