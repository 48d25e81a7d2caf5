//! Nonparametric percentile bootstrap over resampling units (loans or ids).
//!
//! A resample is handed to the statistic as a multiplicity count per unit,
//! so weighted statistics just multiply their weights by the counts.
//! Resample `b` draws from its own ChaCha stream derived from the master
//! seed, which makes results independent of thread count.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::stats::sorted_percentile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub n_boot: usize,
    pub seed: u64,
    /// Largest tolerated share of resamples on which the statistic fails.
    pub max_failure_rate: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_boot: 1000,
            seed: 0,
            max_failure_rate: 0.01,
        }
    }
}

impl BootstrapConfig {
    pub fn new(n_boot: usize, seed: u64) -> Self {
        Self {
            n_boot,
            seed,
            ..Self::default()
        }
    }
}

/// Central 68% and 95% percentile intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intervals {
    pub ci68: (f64, f64),
    pub ci95: (f64, f64),
}

impl Intervals {
    pub fn from_samples(mut samples: Vec<f64>) -> Self {
        samples.sort_by(f64::total_cmp);
        let q = |p| sorted_percentile(&samples, p);
        Self {
            ci68: (q(0.16), q(0.84)),
            ci95: (q(0.025), q(0.975)),
        }
    }

    pub fn degenerate(x: f64) -> Self {
        Self {
            ci68: (x, x),
            ci95: (x, x),
        }
    }
}

/// Multiplicity counts for resample `b` of `n` units.
pub fn resample_counts(n: usize, seed: u64, b: usize) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    counts
}

/// Percentile intervals for one statistic. `statistic` receives the counts
/// of a resample and returns `None` when it cannot be evaluated on it.
pub fn bootstrap_ci<F>(n_units: usize, config: &BootstrapConfig, statistic: F) -> Result<Intervals>
where
    F: Fn(&[u32]) -> Option<f64> + Sync,
{
    let mut out = bootstrap_many(n_units, 1, config, |c| vec![statistic(c)])?;
    out.pop().expect("one output")
}

/// Percentile intervals for `k` statistics computed together on each resample.
/// Each output fails independently when its statistic fails too often.
pub fn bootstrap_many<F>(
    n_units: usize,
    k: usize,
    config: &BootstrapConfig,
    statistic: F,
) -> Result<Vec<Result<Intervals>>>
where
    F: Fn(&[u32]) -> Vec<Option<f64>> + Sync,
{
    if config.n_boot < 100 {
        return Err(AuditError::Config(format!(
            "bootstrap needs at least 100 resamples, got {}",
            config.n_boot
        )));
    }
    if n_units == 0 {
        return Err(AuditError::Degenerate("bootstrap over zero units".into()));
    }
    let draws: Vec<Vec<Option<f64>>> = (0..config.n_boot)
        .into_par_iter()
        .map(|b| {
            let counts = resample_counts(n_units, config.seed, b);
            let v = statistic(&counts);
            debug_assert_eq!(v.len(), k);
            v
        })
        .collect();
    let limit = (config.max_failure_rate * config.n_boot as f64).floor() as usize;
    Ok((0..k)
        .map(|j| {
            let ok: Vec<f64> = draws
                .iter()
                .filter_map(|d| d[j])
                .filter(|x| x.is_finite())
                .collect();
            let failed = config.n_boot - ok.len();
            if failed > limit {
                Err(AuditError::Degenerate(format!(
                    "statistic failed on {failed} of {} resamples",
                    config.n_boot
                )))
            } else {
                Ok(Intervals::from_samples(ok))
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn mean_stat(x: &[f64]) -> impl Fn(&[u32]) -> Option<f64> + Sync + '_ {
        move |c| {
            let (s, n) = x
                .iter()
                .zip(c)
                .fold((0.0, 0.0), |(s, n), (v, k)| (s + v * *k as f64, n + *k as f64));
            Some(s / n)
        }
    }

    #[test]
    fn zero_variance_sample() {
        let x = [1.0; 4];
        let ci = bootstrap_ci(4, &BootstrapConfig::new(200, 1), mean_stat(&x)).unwrap();
        assert_eq!(ci.ci68, (1.0, 1.0));
        assert_eq!(ci.ci95, (1.0, 1.0));
    }

    #[test]
    fn normal_theory_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ci = bootstrap_ci(x.len(), &BootstrapConfig::new(1000, 5), mean_stat(&x)).unwrap();
        let width = ci.ci95.1 - ci.ci95.0;
        let expected = 2.0 * 1.96 / 100.0;
        assert!((width / expected - 1.0).abs() < 0.2, "width {width}");
        assert!(ci.ci95.0 <= ci.ci68.0 && ci.ci68.1 <= ci.ci95.1);
    }

    #[test]
    fn same_seed_same_intervals() {
        let x: Vec<f64> = (0..500).map(|i| (i as f64).sin()).collect();
        let a = bootstrap_ci(x.len(), &BootstrapConfig::new(300, 7), mean_stat(&x)).unwrap();
        let b = bootstrap_ci(x.len(), &BootstrapConfig::new(300, 7), mean_stat(&x)).unwrap();
        assert_eq!(a.ci95.0.to_bits(), b.ci95.0.to_bits());
        assert_eq!(a.ci68.1.to_bits(), b.ci68.1.to_bits());
    }

    #[test]
    fn failing_statistic_is_an_error() {
        let r = bootstrap_ci(10, &BootstrapConfig::new(100, 1), |c| (c[0] == 0).then_some(1.0));
        assert!(r.is_err());
        assert!(bootstrap_ci(10, &BootstrapConfig::new(50, 1), |_| Some(1.0)).is_err());
    }
}
