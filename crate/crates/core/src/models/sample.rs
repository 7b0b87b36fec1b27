use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, StudentT};

use super::{EnsembleScaleLaw, EpochKernel};

/// Draws one unit-variance kernel variate.
pub fn sample_kernel<R: Rng + ?Sized>(kernel: EpochKernel, rng: &mut R) -> f64 {
    match kernel {
        EpochKernel::Gaussian => rng.sample(StandardNormal),
        EpochKernel::Algebraic { l } => {
            let nu = 2.0 * l - 1.0;
            let t = StudentT::new(nu).expect("validated kernel");
            t.sample(rng) * ((nu - 2.0) / nu).sqrt()
        }
    }
}

/// Draws one mean-one variance scale.
pub fn sample_scale<R: Rng + ?Sized>(law: EnsembleScaleLaw, rng: &mut R) -> f64 {
    match law {
        EnsembleScaleLaw::Gaussian { n } => {
            // χ²_N / N for real N
            Gamma::new(0.5 * n, 2.0 / n).expect("validated law").sample(rng)
        }
        EnsembleScaleLaw::Algebraic { n, big_l } => {
            let alpha = 0.5 * n;
            let beta = big_l - 0.5 * n;
            let num = Gamma::new(alpha, 1.0).expect("validated law").sample(rng);
            let den = Gamma::new(beta, 1.0).expect("validated law").sample(rng);
            let m = big_l - 0.5 * n - 1.0;
            (num / den) * 2.0 * m / n
        }
    }
}

enum KernelSampler {
    Gaussian,
    Student { t: StudentT<f64>, scale: f64 },
}

enum ScaleSampler {
    Unit,
    Gaussian(Gamma<f64>),
    Algebraic { num: Gamma<f64>, den: Gamma<f64>, factor: f64 },
}

pub(super) fn sample_model(
    kernel: EpochKernel,
    ensemble: Option<EnsembleScaleLaw>,
    n: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ks = match kernel {
        EpochKernel::Gaussian => KernelSampler::Gaussian,
        EpochKernel::Algebraic { l } => {
            let nu = 2.0 * l - 1.0;
            KernelSampler::Student {
                t: StudentT::new(nu).expect("validated kernel"),
                scale: ((nu - 2.0) / nu).sqrt(),
            }
        }
    };
    let ss = match ensemble {
        None => ScaleSampler::Unit,
        Some(EnsembleScaleLaw::Gaussian { n }) => {
            ScaleSampler::Gaussian(Gamma::new(0.5 * n, 2.0 / n).expect("validated law"))
        }
        Some(EnsembleScaleLaw::Algebraic { n, big_l }) => ScaleSampler::Algebraic {
            num: Gamma::new(0.5 * n, 1.0).expect("validated law"),
            den: Gamma::new(big_l - 0.5 * n, 1.0).expect("validated law"),
            factor: 2.0 * (big_l - 0.5 * n - 1.0) / n,
        },
    };
    (0..n)
        .map(|_| {
            let u = match &ss {
                ScaleSampler::Unit => 1.0,
                ScaleSampler::Gaussian(g) => g.sample(&mut rng),
                ScaleSampler::Algebraic { num, den, factor } => {
                    let a = num.sample(&mut rng);
                    a / den.sample(&mut rng) * factor
                }
            };
            let eps = match &ks {
                KernelSampler::Gaussian => rng.sample::<f64, _>(StandardNormal),
                KernelSampler::Student { t, scale } => t.sample(&mut rng) * scale,
            };
            u.sqrt() * eps
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_empty() {
        let k = EpochKernel::Algebraic { l: 2.5 };
        let e = Some(EnsembleScaleLaw::Algebraic { n: 4.0, big_l: 7.0 });
        assert!(sample_model(k, e, 0, 1).is_empty());
        let a = sample_model(k, e, 1000, 42);
        let b = sample_model(k, e, 1000, 42);
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_ne!(a, sample_model(k, e, 1000, 43));
    }

    #[test]
    fn unit_variance_and_mean_one_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 400_000;
        let law = EnsembleScaleLaw::Algebraic { n: 5.0, big_l: 9.0 };
        let mean: f64 = (0..n).map(|_| sample_scale(law, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        let k = EpochKernel::Algebraic { l: 4.0 };
        let var: f64 = (0..n).map(|_| sample_kernel(k, &mut rng).powi(2)).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }
}
