//! Small descriptive-statistics helpers shared by the reporting modules.

use serde::{Deserialize, Serialize};

/// z-score of the two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divides by n).
pub fn population_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Sample standard deviation (divides by n - 1); zero for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Mean together with the normal-approximation 95% half-width `1.96 * sd / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub ci95: f64,
}

impl MeanCi {
    pub fn from_values(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        Self {
            mean: mean(xs),
            ci95: Z95 * sample_sd(xs) / n.sqrt(),
        }
    }
}

pub fn skewness(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let sd = population_sd(xs);
    if sd == 0.0 {
        return 0.0;
    }
    xs.iter().map(|x| ((x - m) / sd).powi(3)).sum::<f64>() / xs.len() as f64
}

pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (end - start) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { end } else { start + step * i as f64 })
                .collect()
        }
    }
}
