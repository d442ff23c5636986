use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Redraw budget per resample when the metric is undefined on a draw, so the
/// total never exceeds 10 × `n_resamples` attempts.
const MAX_ATTEMPTS_PER_RESAMPLE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub n_resamples: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_resamples: 1000,
            alpha: 0.05,
            seed: 0,
        }
    }
}

/// Linear-interpolation percentile of an ascending slice (`q` in [0, 1]).
pub fn percentile_linear(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval for a metric over `n` evaluation units.
///
/// `metric` receives the resampled indices (with replacement) and returns
/// `None` when undefined on that draw, which triggers a redraw. Resample `i`
/// draws from its own stream derived from `(seed, i)`, so the result does
/// not depend on the worker count.
pub fn bootstrap_ci<F>(n: usize, metric: F, cfg: &BootstrapConfig) -> Result<(f64, f64)>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    if n == 0 {
        return Err(Error::InvalidInput("bootstrap over an empty sample".into()));
    }
    if cfg.n_resamples == 0 || !(0.0..1.0).contains(&cfg.alpha) {
        return Err(Error::InvalidInput(format!(
            "bootstrap: n_resamples={} alpha={}",
            cfg.n_resamples, cfg.alpha
        )));
    }
    let stats: Vec<Option<f64>> = (0..cfg.n_resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(cfg.seed, i as u64);
            let mut idx = vec![0usize; n];
            for _ in 0..MAX_ATTEMPTS_PER_RESAMPLE {
                for slot in idx.iter_mut() {
                    *slot = rng.random_range(0..n);
                }
                if let Some(v) = metric(&idx) {
                    return Some(v);
                }
            }
            None
        })
        .collect();
    let mut values = Vec::with_capacity(stats.len());
    for (i, s) in stats.into_iter().enumerate() {
        match s {
            Some(v) => values.push(v),
            None => {
                return Err(Error::Undefined(format!(
                    "bootstrap resample {i}: metric undefined after {MAX_ATTEMPTS_PER_RESAMPLE} draws"
                )))
            }
        }
    }
    values.sort_by(f64::total_cmp);
    Ok((
        percentile_linear(&values, cfg.alpha / 2.0),
        percentile_linear(&values, 1.0 - cfg.alpha / 2.0),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_metric_collapses() {
        let (lo, hi) = bootstrap_ci(10, |_| Some(0.7), &BootstrapConfig::default()).unwrap();
        assert_eq!((lo, hi), (0.7, 0.7));
    }

    #[test]
    fn deterministic_given_seed() {
        let data: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let mean = |idx: &[usize]| Some(idx.iter().map(|&i| data[i]).sum::<f64>() / idx.len() as f64);
        let cfg = BootstrapConfig { seed: 11, ..Default::default() };
        assert_eq!(bootstrap_ci(50, mean, &cfg).unwrap(), bootstrap_ci(50, mean, &cfg).unwrap());
    }

    #[test]
    fn never_defined_errors() {
        assert!(bootstrap_ci(5, |_| None, &BootstrapConfig::default()).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile_linear(&v, 0.0), 1.0);
        assert_eq!(percentile_linear(&v, 1.0), 4.0);
        assert!((percentile_linear(&v, 0.5) - 2.5).abs() < 1e-15);
    }
}
