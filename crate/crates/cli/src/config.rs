//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use mvdist_core::ingest::QuoteSchema;
use mvdist_core::models::{factor_correlation, one_factor_correlation, SynthSpec};
use mvdist_core::studies::PairSampling;
use mvdist_core::{BinningRule, EnsembleScaleLaw, EpochKernel, Error, Family, FitConfig, Result, Scale};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Required whenever a stage draws random numbers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory, resolved under `MVDIST_OUT` when relative.
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub source: Source,
    #[serde(default)]
    pub epochs: EpochConfig,
    #[serde(default)]
    pub binning: BinningRule,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub studies: StudyConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("mvdist-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Source {
    Synthetic(SyntheticSource),
    Quotes(QuoteSource),
    Daily(DailySource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub k: usize,
    pub epochs: usize,
    pub epoch_len: usize,
    #[serde(default)]
    pub kernel: KernelName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(default)]
    pub ensemble: EnsembleName,
    #[serde(default, rename = "N", skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    #[serde(default, rename = "L", skip_serializing_if = "Option::is_none")]
    pub big_l: Option<f64>,
    #[serde(default)]
    pub correlation: Structure,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelName {
    #[default]
    Gaussian,
    Algebraic,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleName {
    #[default]
    None,
    Gaussian,
    Algebraic,
}

/// Mean correlation structure of a synthetic market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "structure", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Structure {
    Identity,
    OneFactor {
        rho: f64,
    },
    /// Market factor plus a two-group sector factor whose sign flips over
    /// the stream; the market loading moves linearly from start to end.
    DriftingFactor {
        market_start: f64,
        market_end: f64,
        sector: f64,
    },
}

impl Default for Structure {
    fn default() -> Self {
        Structure::OneFactor { rho: 0.3 }
    }
}

impl Structure {
    /// Mean correlation matrices at the first and last epoch.
    pub fn endpoints(&self, k: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        match *self {
            Structure::Identity => Ok((DMatrix::identity(k, k), DMatrix::identity(k, k))),
            Structure::OneFactor { rho } => {
                let c = one_factor_correlation(k, rho)?;
                Ok((c.clone(), c))
            }
            Structure::DriftingFactor {
                market_start,
                market_end,
                sector,
            } => {
                let loadings = |market: f64, sign: f64| {
                    DMatrix::from_fn(k, 2, |i, j| match j {
                        0 => market,
                        _ if 2 * i < k => sign * sector,
                        _ => -sign * sector,
                    })
                };
                Ok((
                    factor_correlation(&loadings(market_start, 1.0))?,
                    factor_correlation(&loadings(market_end, -1.0))?,
                ))
            }
        }
    }
}

impl SyntheticSource {
    pub fn kernel(&self) -> Result<EpochKernel> {
        match self.kernel {
            KernelName::Gaussian => Ok(EpochKernel::Gaussian),
            KernelName::Algebraic => EpochKernel::algebraic(
                self.l
                    .ok_or_else(|| Error::Config("algebraic kernel needs `l`".into()))?,
            ),
        }
    }

    pub fn ensemble(&self) -> Result<Option<EnsembleScaleLaw>> {
        let n = || self.n.ok_or_else(|| Error::Config("ensemble needs `N`".into()));
        let law = match self.ensemble {
            EnsembleName::None => return Ok(None),
            EnsembleName::Gaussian => EnsembleScaleLaw::Gaussian { n: n()? },
            EnsembleName::Algebraic => EnsembleScaleLaw::Algebraic {
                n: n()?,
                big_l: self
                    .big_l
                    .ok_or_else(|| Error::Config("algebraic ensemble needs `L`".into()))?,
            },
        };
        law.validate()?;
        Ok(Some(law))
    }

    pub fn spec(&self, seed: u64) -> Result<SynthSpec> {
        Ok(SynthSpec {
            kernel: self.kernel()?,
            ensemble: self.ensemble()?,
            epochs: self.epochs,
            epoch_len: self.epoch_len,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuoteSource {
    pub files: Vec<PathBuf>,
    /// Date for files whose timestamps carry only a time of day.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<NaiveDate>,
    pub calendar: PathBuf,
    /// Grid spacing in seconds.
    pub dt: u32,
    #[serde(default)]
    pub include_overnight: bool,
    #[serde(default)]
    pub schema: QuoteSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DailySource {
    pub file: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpochConfig {
    /// Columns per epoch. Unset means the source's own epochs (trading days).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    /// Interval lengths in epochs. Empty means one interval over all epochs.
    pub intervals: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub scales: Vec<Scale>,
    pub families: Vec<Family>,
    pub bounds: FitConfig,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            scales: vec![Scale::Log, Scale::Lin],
            families: Family::ALL.to_vec(),
            bounds: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub overlay: bool,
    pub overlay_family: Family,
    /// Abscissas at which overlay curves are exported.
    pub overlay_grid: Vec<f64>,
    /// Epoch lengths for the normalization-artifact study; empty disables it.
    pub epoch_length: Vec<usize>,
    pub shrinkage: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shrinkage_intensity: Option<f64>,
    /// Runs only when the panel holds day-boundary returns.
    pub overnight: bool,
    pub pairs: PairSampling,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            overlay: true,
            overlay_family: Family::GG,
            overlay_grid: (0..=40).map(|i| 0.25 * i as f64).collect(),
            epoch_length: Vec::new(),
            shrinkage: false,
            shrinkage_intensity: None,
            overnight: false,
            pairs: PairSampling::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        match &mut cfg.source {
            Source::Quotes(q) => {
                for f in &mut q.files {
                    *f = base.join(&*f);
                }
                q.calendar = base.join(&q.calendar);
            }
            Source::Daily(d) => d.file = base.join(&d.file),
            Source::Synthetic(_) => {}
        }
        Ok(cfg)
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match &self.source {
            Source::Synthetic(s) => {
                if self.seed.is_none() {
                    return bad("a synthetic source needs `seed`".into());
                }
                if s.k == 0 || s.epochs == 0 || s.epoch_len == 0 {
                    return bad("synthetic k, epochs and epoch_len must be positive".into());
                }
                s.kernel()?;
                s.ensemble()?;
            }
            Source::Quotes(q) => {
                if q.files.is_empty() {
                    return bad("quote source lists no files".into());
                }
                for p in q.files.iter().chain([&q.calendar]) {
                    if !p.is_file() {
                        return bad(format!("missing input {}", p.display()));
                    }
                }
                if q.dt == 0 {
                    return bad("dt must be positive".into());
                }
            }
            Source::Daily(d) => {
                if !d.file.is_file() {
                    return bad(format!("missing input {}", d.file.display()));
                }
            }
        }
        if !self.studies.epoch_length.is_empty() && self.seed.is_none() {
            return bad("the epoch-length study samples pairs and needs `seed`".into());
        }
        if self.epochs.length == Some(0) || self.epochs.intervals.contains(&0) {
            return bad("epoch and interval lengths must be positive".into());
        }
        if self.fit.scales.is_empty() {
            return bad("no fit scales configured".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        self.fit.bounds.validate()
    }

    /// Settings that determine the results. Output location and worker
    /// count are left out so that they do not change the hash.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        c.workers = None;
        toml::to_string(&c).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn pair_sampling(&self) -> PairSampling {
        PairSampling {
            seed: self.seed.unwrap_or(self.studies.pairs.seed),
            ..self.studies.pairs
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SYNTH: &str = r#"
seed = 7
[source]
kind = "synthetic"
k = 5
epochs = 4
epoch_len = 40
kernel = "algebraic"
l = 4
ensemble = "algebraic"
N = 8
L = 12
[source.correlation]
structure = "one-factor"
rho = 0.2
"#;

    #[test]
    fn parses_flat_model_keys() {
        let cfg = RunConfig::from_toml(SYNTH).unwrap();
        cfg.validate().unwrap();
        let Source::Synthetic(s) = &cfg.source else { panic!() };
        assert_eq!(s.kernel().unwrap(), EpochKernel::Algebraic { l: 4.0 });
        assert_eq!(s.ensemble().unwrap(), Some(EnsembleScaleLaw::Algebraic { n: 8.0, big_l: 12.0 }));
        assert_eq!(cfg.fit.scales, vec![Scale::Log, Scale::Lin]);
    }

    #[test]
    fn missing_seed_is_a_config_error() {
        let cfg = RunConfig::from_toml(&SYNTH.replace("seed = 7", "")).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml(&format!("{SYNTH}\n[epochs]\nlenght = 3\n")).is_err());
    }

    #[test]
    fn hash_ignores_output_and_workers() {
        let a = RunConfig::from_toml(SYNTH).unwrap();
        let mut b = a.clone();
        b.output = "elsewhere".into();
        b.workers = Some(3);
        assert_eq!(a.hash(), b.hash());
        b.seed = Some(8);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(RunConfig::from_toml(&a.canonical()).unwrap().hash(), a.hash());
    }

    #[test]
    fn drifting_structure_flips_sector_sign() {
        let s = Structure::DriftingFactor {
            market_start: 0.2,
            market_end: 0.75,
            sector: 0.5,
        };
        let (a, b) = s.endpoints(4).unwrap();
        assert!((a[(0, 1)] - (0.04 + 0.25)).abs() < 1e-15);
        assert!((a[(0, 3)] - (0.04 - 0.25)).abs() < 1e-15);
        assert!((b[(0, 3)] - (0.5625 - 0.25)).abs() < 1e-15);
        assert_eq!(a[(2, 2)], 1.0);
    }
}
