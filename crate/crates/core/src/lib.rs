//! Eigenbasis aggregation of multivariate returns and heavy-tailed model
//! fitting for non-stationary markets.
//!
//! The pipeline runs `ingest` → `epochs` → `spectra` → `rotate` →
//! `density`/`fitting`, with `studies` composing those stages into the
//! comparative experiments and `models` providing both the fitted families
//! and the synthetic-market generator.

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod density;
pub mod epochs;
pub mod error;
pub mod fitting;
pub mod ingest;
pub mod io;
pub mod models;
pub mod quadrature;
pub mod rotate;
pub mod seed;
pub mod spectra;
pub mod stats;
pub mod studies;

pub use density::{BinningRule, EmpiricalDensity};
pub use epochs::{EpochPartition, Horizon, NormMode, NormalizedPanel, ReturnPanel, SliceId};
pub use error::{Error, ErrorKind, Result};
pub use fitting::{FitConfig, FitResult, Scale};
pub use models::{EnsembleScaleLaw, EpochKernel, Family, ModelDistribution, ModelSpec};
pub use rotate::RotatedPanel;
pub use spectra::{CorrelationMatrix, MatrixKind, SpectralDecomposition};
