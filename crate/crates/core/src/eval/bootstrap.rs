use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};

use super::metrics::mean;

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;

/// Percentile bootstrap interval for the mean of `values`.
pub fn bootstrap_ci(values: &[f64], confidence: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(CoreError::data(format!("bootstrap needs at least 2 values, got {n}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) || resamples == 0 {
        return Err(CoreError::config("bootstrap needs confidence in (0, 1) and resamples >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = vec![0.0; n];
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            for d in draw.iter_mut() {
                *d = values[rng.random_range(0..n)];
            }
            mean(&draw)
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - confidence) / 2.0;
    Ok((quantile(&means, tail), quantile(&means, 1.0 - tail)))
}

/// Linear interpolation between order statistics of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + w * (sorted[hi] - sorted[lo])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn constant_values_give_a_point_interval() {
        let c = 0.7;
        assert_eq!(bootstrap_ci(&[c; 25], 0.95, 1000, 3).unwrap(), (c, c));
    }

    #[test]
    fn symmetric_data_interval_contains_mean() {
        let values: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.1).collect();
        let (lo, hi) = bootstrap_ci(&values, 0.95, 1000, 1).unwrap();
        let m = mean(&values);
        assert!(lo < m && m < hi, "{lo} {m} {hi}");
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let values = [1.0, 4.0, 2.0, 8.0, 5.0];
        assert_eq!(
            bootstrap_ci(&values, 0.9, 500, 11).unwrap(),
            bootstrap_ci(&values, 0.9, 500, 11).unwrap()
        );
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[0.0, 10.0], 0.25), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0], 0.5), 2.0);
    }

    #[test]
    fn coverage_of_gaussian_mean_is_near_nominal() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let dist = Normal::new(3.0, 2.0).unwrap();
        let trials = 500;
        let mut covered = 0;
        for k in 0..trials {
            let data: Vec<f64> = (0..60).map(|_| dist.sample(&mut rng)).collect();
            let (lo, hi) = bootstrap_ci(&data, 0.95, 1000, k).unwrap();
            if lo <= 3.0 && 3.0 <= hi {
                covered += 1;
            }
        }
        let rate = covered as f64 / trials as f64;
        assert!((rate - 0.95).abs() <= 0.03, "coverage {rate}");
    }

    #[test]
    fn rejects_single_value() {
        assert!(bootstrap_ci(&[1.0], 0.95, 100, 0).is_err());
    }
}
