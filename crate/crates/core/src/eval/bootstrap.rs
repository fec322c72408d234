use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::canon;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub resamples: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        BootstrapSettings {
            resamples: 1000,
            alpha: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Percentile bootstrap interval for the mean of `samples`.
pub fn bootstrap_ci(samples: &[f64], settings: &BootstrapSettings) -> Result<Interval> {
    bootstrap_ci_with(samples.len(), settings, |idx| {
        idx.iter().map(|&i| samples[i]).sum::<f64>() / idx.len() as f64
    })
}

/// Percentile bootstrap interval for an arbitrary statistic of `n` items.
///
/// `stat` receives the resampled item indices; the point estimate is `stat`
/// over `0..n`. The bounds are the `floor(B * alpha/2)`-th and
/// `(ceil(B * (1 - alpha/2)) - 1)`-th order statistics of the `B` resampled
/// values, widened if needed so that `lo <= point <= hi`.
pub fn bootstrap_ci_with(
    n: usize,
    settings: &BootstrapSettings,
    stat: impl Fn(&[usize]) -> f64,
) -> Result<Interval> {
    if n == 0 {
        return Err(Error::Precondition("bootstrap needs at least one sample".into()));
    }
    if settings.resamples == 0 || !(settings.alpha > 0.0 && settings.alpha < 1.0) {
        return Err(Error::Precondition(format!(
            "bootstrap needs resamples > 0 and alpha in (0, 1), got {} and {}",
            settings.resamples, settings.alpha
        )));
    }
    let all: Vec<usize> = (0..n).collect();
    let point = stat(&all);
    let mut rng = canon::rng_for(&[b"bootstrap", &settings.seed.to_le_bytes()]);
    let mut idx = vec![0usize; n];
    let mut stats = Vec::with_capacity(settings.resamples);
    for _ in 0..settings.resamples {
        for slot in idx.iter_mut() {
            *slot = rng.gen_range(0..n);
        }
        stats.push(stat(&idx));
    }
    stats.sort_by(f64::total_cmp);
    let b = settings.resamples as f64;
    let lo_rank = ((settings.alpha / 2.0) * b).floor() as usize;
    let hi_rank = (((1.0 - settings.alpha / 2.0) * b).ceil() as usize).clamp(1, settings.resamples) - 1;
    Ok(Interval {
        point,
        lo: stats[lo_rank.min(settings.resamples - 1)].min(point),
        hi: stats[hi_rank].max(point),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_inputs_are_degenerate() {
        let s = BootstrapSettings::default();
        let i = bootstrap_ci(&[1.0; 50], &s).unwrap();
        assert_eq!((i.point, i.lo, i.hi), (1.0, 1.0, 1.0));
        let i = bootstrap_ci(&[0.5; 7], &s).unwrap();
        assert_eq!((i.point, i.lo, i.hi), (0.5, 0.5, 0.5));
    }

    #[test]
    fn seeded() {
        let xs: Vec<f64> = (0..40).map(|i| (i % 3) as f64).collect();
        let s = BootstrapSettings { seed: 4, ..Default::default() };
        assert_eq!(bootstrap_ci(&xs, &s).unwrap(), bootstrap_ci(&xs, &s).unwrap());
        let t = BootstrapSettings { seed: 5, ..s };
        assert_ne!(bootstrap_ci(&xs, &s).unwrap(), bootstrap_ci(&xs, &t).unwrap());
    }

    #[test]
    fn rejects_bad_input() {
        let s = BootstrapSettings::default();
        assert!(bootstrap_ci(&[], &s).is_err());
        assert!(bootstrap_ci(&[1.0], &BootstrapSettings { resamples: 0, ..s }).is_err());
        assert!(bootstrap_ci(&[1.0], &BootstrapSettings { alpha: 1.0, ..s }).is_err());
    }

    #[test]
    fn single_resample() {
        let s = BootstrapSettings { resamples: 1, ..Default::default() };
        let i = bootstrap_ci(&[0.0, 1.0], &s).unwrap();
        assert!(i.lo <= i.point && i.point <= i.hi);
    }
}
