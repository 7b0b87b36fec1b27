//! Fixtures shared by the benchmarks.

use mvdist_core::density::{estimate_density, BinningRule};
use mvdist_core::epochs::normalize_time_series;
use mvdist_core::models::{one_factor_correlation, synthesize_panel, SynthSpec};
use mvdist_core::spectra::time_correlation;
use mvdist_core::{CorrelationMatrix, EmpiricalDensity, EnsembleScaleLaw, EpochKernel, Family, NormalizedPanel};

/// One normalized epoch of a one-factor market with a Gaussian ensemble.
pub fn epoch(k: usize, t: usize) -> NormalizedPanel {
    let spec = SynthSpec {
        kernel: EpochKernel::Algebraic { l: 3.0 },
        ensemble: Some(EnsembleScaleLaw::Gaussian { n: (k + 10) as f64 }),
        epochs: 1,
        epoch_len: t,
        seed: 1,
    };
    let c = one_factor_correlation(k, 0.3).expect("valid correlation");
    normalize_time_series(&synthesize_panel(&c, &spec).expect("synthesis")).expect("normalization")
}

pub fn correlation(k: usize, t: usize) -> CorrelationMatrix {
    time_correlation(&epoch(k, t)).expect("time series mode")
}

/// Histogram of `n` draws from an AA model.
pub fn aa_density(n: usize) -> EmpiricalDensity {
    let m = Family::AA.model(Some(2.6), 6.0, Some(12.0)).expect("valid parameters");
    estimate_density(&m.sample(n, 2), &BinningRule::default(), "bench").expect("non-degenerate samples")
}
