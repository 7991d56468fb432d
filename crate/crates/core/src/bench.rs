//! Fit and rollout throughput on synthetic data.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dmdc::{self, SnapshotSet};
use crate::error::{Error, Result};
use crate::plant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub points: usize,
    pub observables: usize,
    pub inputs: usize,
    pub seed: u64,
    pub fit_target_us: f64,
    pub rollout_target_us: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            points: 1_000_000,
            observables: 3,
            inputs: 21,
            seed: 0,
            fit_target_us: 25.0,
            rollout_target_us: 150.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub points: usize,
    pub observables: usize,
    pub inputs: usize,
    pub fit_seconds: f64,
    pub fit_us_per_point: f64,
    pub rollout_seconds: f64,
    pub rollout_us_per_point: f64,
    pub fit_target_us: f64,
    pub rollout_target_us: f64,
    pub fit_within_target: bool,
    pub rollout_within_target: bool,
    pub hardware: String,
}

/// Architecture, OS, thread count and CPU model when the OS exposes it.
pub fn hardware_descriptor() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    format!("{} {} / {model} / {threads} threads", std::env::consts::OS, std::env::consts::ARCH)
}

/// Simulates `points` steps of a random stable plant, then times a fit on
/// all snapshot pairs and a self-fed rollout over every step.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    let (n, q, p) = (config.points, config.observables, config.inputs);
    if n < 2 * (q + p) || q == 0 {
        return Err(Error::Config(format!("{n} points are too few for q={q}, p={p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let a = plant::random_stable_matrix(q, 0.9, &mut rng);
    let b = DMatrix::from_fn(q, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let u = DMatrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y0 = DVector::zeros(q);
    let y = dmdc::rollout(&a, &b, &y0, &u)?;

    let snaps = SnapshotSet {
        observable_names: (0..q).map(|i| format!("y{i}")).collect(),
        input_names: (0..p).map(|i| format!("u{i}")).collect(),
        y_t: y.columns(0, n - 1).into_owned(),
        y_t1: y.columns(1, n - 1).into_owned(),
        u_t: u.columns(1, n - 1).into_owned(),
    };
    let start = Instant::now();
    let fitted = dmdc::fit(&snaps, None)?;
    let fit_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let out = dmdc::rollout(&fitted.a, &fitted.b, &y0, &u)?;
    let rollout_seconds = start.elapsed().as_secs_f64();
    std::hint::black_box(out);

    let fit_us = fit_seconds * 1e6 / (n - 1) as f64;
    let rollout_us = rollout_seconds * 1e6 / n as f64;
    Ok(BenchReport {
        points: n,
        observables: q,
        inputs: p,
        fit_seconds,
        fit_us_per_point: fit_us,
        rollout_seconds,
        rollout_us_per_point: rollout_us,
        fit_target_us: config.fit_target_us,
        rollout_target_us: config.rollout_target_us,
        fit_within_target: fit_us <= config.fit_target_us,
        rollout_within_target: rollout_us <= config.rollout_target_us,
        hardware: hardware_descriptor(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bench_reports_rates() {
        let r = run_bench(&BenchConfig { points: 5_000, ..Default::default() }).unwrap();
        assert!(r.fit_us_per_point > 0.0 && r.rollout_us_per_point > 0.0);
        assert!(!r.hardware.is_empty());
    }
}
