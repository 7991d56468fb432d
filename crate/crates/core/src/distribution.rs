//! One-dimensional Wasserstein (earth mover's) distances between channel
//! distributions, against uniform benchmarks and across train/test splits.

use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::stats::{self, MeanCi};
use crate::validation::Fold;

pub const TRAIN_TO_UNIFORM: &str = "Train→Uniform";
pub const TEST_TO_UNIFORM: &str = "Test→Uniform";
pub const TEST_TO_TRAIN: &str = "Test→Train";

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// W1 between two empirical distributions.
///
/// Integrates `|F_a(x) - F_b(x)|` over the merged support, which equals the
/// integral of the absolute quantile-function difference and handles unequal
/// sample sizes without truncation.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(wasserstein_sorted(&sorted(a), &sorted(b)))
}

fn wasserstein_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut total = 0.0;
    let mut x = a[0].min(b[0]);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        let diff = (i as f64 / na - j as f64 / nb).abs();
        total += diff * (next - x);
        x = next;
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
    }
    total
}

/// Equally spaced grid on `[min, max]` of the sample, same length as the sample.
pub fn uniform_reference(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(Error::ConstantChannel(String::new()));
    }
    Ok(stats::linspace(lo, hi, samples.len()))
}

/// Distance of a sample to the uniform distribution over its own range.
pub fn uniform_benchmark(samples: &[f64]) -> Result<f64> {
    let grid = uniform_reference(samples)?;
    wasserstein_1d(samples, &grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WassersteinResult {
    pub pair_label: String,
    pub channel: String,
    pub mean_distance: f64,
    pub ci95_halfwidth: f64,
    pub repeats: usize,
    pub per_repeat: Vec<f64>,
}

fn pooled(datasets: &[TimeSeriesDataset], idx: &[usize], channel: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for &i in idx {
        out.extend_from_slice(datasets[i].column(channel)?);
    }
    Ok(out)
}

fn named(channel: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::ConstantChannel(_) => Error::ConstantChannel(channel.to_string()),
        other => other,
    }
}

/// Train→Uniform, Test→Uniform and Test→Train distances per channel,
/// aggregated over the folds (one fold per repeat).
pub fn split_shift_report<S: AsRef<str>>(
    datasets: &[TimeSeriesDataset],
    folds: &[Fold],
    channels: &[S],
) -> Result<Vec<WassersteinResult>> {
    if folds.is_empty() {
        return Err(Error::Config("split report needs at least one fold".into()));
    }
    let mut out = Vec::new();
    for ch in channels {
        let ch = ch.as_ref();
        let mut train_u = Vec::with_capacity(folds.len());
        let mut test_u = Vec::with_capacity(folds.len());
        let mut test_train = Vec::with_capacity(folds.len());
        for fold in folds {
            if fold.train.is_empty() || fold.test.is_empty() {
                return Err(Error::Config(format!("fold {} lacks train or test data", fold.index)));
            }
            let train = sorted(&pooled(datasets, &fold.train, ch)?);
            let test = sorted(&pooled(datasets, &fold.test, ch)?);
            train_u.push(uniform_benchmark(&train).map_err(named(ch))?);
            test_u.push(uniform_benchmark(&test).map_err(named(ch))?);
            test_train.push(wasserstein_sorted(&test, &train));
        }
        for (label, values) in [(TRAIN_TO_UNIFORM, train_u), (TEST_TO_UNIFORM, test_u), (TEST_TO_TRAIN, test_train)] {
            let agg = MeanCi::from_values(&values);
            out.push(WassersteinResult {
                pair_label: label.to_string(),
                channel: ch.to_string(),
                mean_distance: agg.mean,
                ci95_halfwidth: agg.ci95,
                repeats: values.len(),
                per_repeat: values,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Transport LP for equal-size samples with uniform weights reduces to
    /// the best assignment; enumerate permutations for tiny instances.
    fn brute_force_assignment(a: &[f64], b: &[f64]) -> f64 {
        fn permute(k: usize, perm: &mut Vec<usize>, a: &[f64], b: &[f64], best: &mut f64) {
            if k == perm.len() {
                let cost: f64 = perm.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).abs()).sum();
                *best = best.min(cost / a.len() as f64);
                return;
            }
            for i in k..perm.len() {
                perm.swap(k, i);
                permute(k + 1, perm, a, b, best);
                perm.swap(k, i);
            }
        }
        let mut best = f64::INFINITY;
        permute(0, &mut (0..a.len()).collect(), a, b, &mut best);
        best
    }

    #[test]
    fn identical_samples_are_zero() {
        let a = [3.0, 1.0, 2.0, 2.0];
        assert_eq!(wasserstein_1d(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn empty_is_error() {
        assert!(matches!(wasserstein_1d(&[], &[1.0]), Err(Error::EmptySample)));
    }

    #[test]
    fn translation_by_one() {
        let a = stats::linspace(0.0, 1.0, 1001);
        let b: Vec<f64> = a.iter().map(|x| x + 1.0).collect();
        assert!((wasserstein_1d(&a, &b).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn point_mass_against_grid() {
        let grid = stats::linspace(0.0, 1.0, 10_001);
        assert!((wasserstein_1d(&[0.0], &grid).unwrap() - 0.5).abs() < 1e-3);
        // 10-point instance against the exhaustive assignment oracle
        let a = [0.0; 8];
        let b = stats::linspace(0.0, 1.0, 8);
        let exact = brute_force_assignment(&a, &b);
        assert!((wasserstein_1d(&a, &b).unwrap() - exact).abs() < 1e-12);
    }

    #[test]
    fn matches_assignment_on_random_small_sets() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a: Vec<f64> = (0..7).map(|_| rng.random::<f64>() * 4.0).collect();
            let b: Vec<f64> = (0..7).map(|_| rng.random::<f64>() * 4.0 - 1.0).collect();
            let w = wasserstein_1d(&a, &b).unwrap();
            assert!((w - brute_force_assignment(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_grid_is_near_zero() {
        let n = 500;
        let g = stats::linspace(0.0, 1.0, n);
        assert!(uniform_benchmark(&g).unwrap() < 2.0 / n as f64);
        assert!(matches!(uniform_benchmark(&[2.0, 2.0]), Err(Error::ConstantChannel(_))));
    }

    #[test]
    fn midpoint_mass_against_uniform() {
        let n = 10_000;
        let mut s = vec![0.5; n];
        s[0] = 0.0;
        s[n - 1] = 1.0;
        assert!((uniform_benchmark(&s).unwrap() - 0.25).abs() < 1e-3);
    }
}
