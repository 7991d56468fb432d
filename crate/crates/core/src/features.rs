//! Multicollinearity screening of input features.
//!
//! Each feature is regressed on all others; its variance inflation factor is
//! `1 / (1 - R²)`. Features are removed one at a time, highest VIF first,
//! with the numerical rank of the remaining feature matrix recorded at every
//! step. Rank deficiency proves collinearity exists; VIF identifies which
//! features carry it.
//!
//! Columns are centered (and scaled) before anything else, which makes the
//! regressions equivalent to ones with an intercept. The centered matrix is
//! reduced once to its `k x k` triangular QR factor; every later regression
//! and rank check runs on columns of that factor, which have the same inner
//! products as the full-length columns.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub use crate::linalg::matrix_rank;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VifThresholds {
    /// VIF above which a feature is strongly collinear.
    pub remove_above: f64,
    /// Selection stops once every VIF is below this value.
    pub accept_below: f64,
}

impl Default for VifThresholds {
    fn default() -> Self {
        Self { remove_above: 10.0, accept_below: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVif {
    pub feature: String,
    #[serde(with = "extended_f64")]
    pub vif: f64,
}

/// Which threshold triggered a removal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalPhase {
    /// Max VIF exceeded `remove_above`.
    Collinear,
    /// No VIF exceeded `remove_above`, but the max was at least `accept_below`.
    Moderate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifIteration {
    pub iteration_index: usize,
    pub vif_values: Vec<FeatureVif>,
    pub excluded_feature: Option<String>,
    #[serde(with = "extended_f64_opt")]
    pub excluded_vif: Option<f64>,
    pub phase: RemovalPhase,
    /// Rank and width of the matrix this iteration started from.
    pub matrix_rank: usize,
    pub column_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifSelectionReport {
    pub iterations: Vec<VifIteration>,
    pub surviving_features: Vec<String>,
    pub final_vif_values: Vec<FeatureVif>,
    pub final_matrix_rank: usize,
    pub thresholds: VifThresholds,
}

/// Centers and scales columns; constant columns become exactly zero.
fn standardize_columns(features: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = features.clone();
    for mut col in out.column_iter_mut() {
        let first = col[0];
        if col.iter().all(|v| *v == first) {
            col.fill(0.0);
            continue;
        }
        let n = col.len() as f64;
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / n).sqrt();
        if sd > 0.0 {
            col /= sd;
        }
    }
    out
}

/// VIF of column `target` against `others`, all given as columns of the
/// triangular factor.
fn vif_from_factor(r: &DMatrix<f64>, target: usize, others: &[usize], rows: usize) -> f64 {
    let y: DVector<f64> = r.column(target).into_owned();
    let ss_tot = y.norm_squared();
    if ss_tot == 0.0 {
        return f64::INFINITY;
    }
    if others.is_empty() {
        return 1.0;
    }
    let x = r.select_columns(others);
    let tol = linalg::default_rank_tolerance(rows, others.len());
    let beta = linalg::lstsq(&x, &y, tol);
    let ss_res = (&y - &x * beta).norm_squared();
    let r2 = 1.0 - ss_res / ss_tot;
    if r2 >= 1.0 - f64::EPSILON {
        f64::INFINITY
    } else {
        1.0 / (1.0 - r2.max(0.0))
    }
}

fn check_shape(features: &DMatrix<f64>) -> Result<()> {
    if features.ncols() < 2 || features.nrows() < 2 {
        return Err(Error::DimensionMismatch(format!(
            "VIF needs at least 2 rows and 2 columns, got {}x{}",
            features.nrows(),
            features.ncols()
        )));
    }
    Ok(())
}

/// VIF of one column (samples in rows). Exact collinearity yields `+inf`.
pub fn vif_single(features: &DMatrix<f64>, index: usize) -> Result<f64> {
    check_shape(features)?;
    if index >= features.ncols() {
        return Err(Error::DimensionMismatch(format!("column {index} out of range")));
    }
    let r = linalg::triangular_factor(&standardize_columns(features));
    let others: Vec<usize> = (0..features.ncols()).filter(|&j| j != index).collect();
    Ok(vif_from_factor(&r, index, &others, features.nrows()))
}

/// VIF of every column.
pub fn vif_all(features: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_shape(features)?;
    let r = linalg::triangular_factor(&standardize_columns(features));
    let cols: Vec<usize> = (0..features.ncols()).collect();
    Ok(vifs_for(&r, &cols, features.nrows()))
}

fn vifs_for(r: &DMatrix<f64>, active: &[usize], rows: usize) -> Vec<f64> {
    let one = |&i: &usize| {
        let others: Vec<usize> = active.iter().copied().filter(|&j| j != i).collect();
        vif_from_factor(r, i, &others, rows)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        active.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        active.iter().map(one).collect()
    }
}

/// Position of the largest value; ties go to the earliest position.
fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Iterative VIF elimination with a rank check at every iteration.
pub fn select_features<S: AsRef<str>>(
    features: &DMatrix<f64>,
    names: &[S],
    thresholds: VifThresholds,
) -> Result<VifSelectionReport> {
    if names.len() != features.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} names for {} columns",
            names.len(),
            features.ncols()
        )));
    }
    if features.ncols() == 0 || features.nrows() < 2 {
        return Err(Error::DimensionMismatch("feature matrix is empty".into()));
    }
    let rows = features.nrows();
    let r = linalg::triangular_factor(&standardize_columns(features));
    let name_of = |j: usize| names[j].as_ref().to_string();
    let mut active: Vec<usize> = (0..features.ncols()).collect();
    let mut iterations = Vec::new();

    loop {
        let sv = linalg::singular_values(&r.select_columns(&active));
        let rank = linalg::rank_from_singular_values(&sv, linalg::default_rank_tolerance(rows, active.len()));
        let vifs = vifs_for(&r, &active, rows);
        let vif_values: Vec<FeatureVif> = active
            .iter()
            .zip(&vifs)
            .map(|(&j, &v)| FeatureVif { feature: name_of(j), vif: v })
            .collect();
        let worst = argmax_first(&vifs);
        let max_vif = vifs[worst];
        if max_vif < thresholds.accept_below {
            return Ok(VifSelectionReport {
                iterations,
                surviving_features: active.iter().map(|&j| name_of(j)).collect(),
                final_vif_values: vif_values,
                final_matrix_rank: rank,
                thresholds,
            });
        }
        if active.len() == 1 {
            return Err(Error::EmptySurvivorSet);
        }
        let phase = if max_vif > thresholds.remove_above {
            RemovalPhase::Collinear
        } else {
            RemovalPhase::Moderate
        };
        let removed = active.remove(worst);
        iterations.push(VifIteration {
            iteration_index: iterations.len() + 1,
            vif_values,
            excluded_feature: Some(name_of(removed)),
            excluded_vif: Some(max_vif),
            phase,
            matrix_rank: rank,
            column_count: active.len() + 1,
        });
    }
}

/// JSON has no infinity; infinite values are written as the string `"inf"`.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad number `{t}`"))),
        }
    }
}

mod extended_f64_opt {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => super::extended_f64::serialize(x, s),
            None => s.serialize_none(),
        }
    }

    #[derive(Deserialize)]
    struct Wrap(#[serde(with = "super::extended_f64")] f64);

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn orthogonal_columns_have_unit_vif() {
        // Hadamard-style +-1 columns, exactly orthogonal and zero-mean
        let rows = 8;
        let m = DMatrix::from_fn(rows, 3, |i, j| if (i >> j) & 1 == 1 { 1.0 } else { -1.0 });
        for v in vif_all(&m).unwrap() {
            assert!((v - 1.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn exact_combination_is_infinite() {
        let mut m = gaussian(200, 3, 4);
        for i in 0..200 {
            m[(i, 2)] = 2.0 * m[(i, 0)] + m[(i, 1)];
        }
        assert_eq!(vif_single(&m, 2).unwrap(), f64::INFINITY);
    }

    #[test]
    fn constant_column_is_infinite() {
        let mut m = gaussian(50, 3, 5);
        m.column_mut(1).fill(0.1);
        assert_eq!(vif_single(&m, 1).unwrap(), f64::INFINITY);
    }

    #[test]
    fn too_few_columns() {
        assert!(vif_single(&gaussian(10, 1, 1), 0).is_err());
        assert!(vif_single(&gaussian(10, 2, 1), 2).is_err());
    }

    #[test]
    fn orthogonal_five_survive_untouched() {
        let m = DMatrix::from_fn(32, 5, |i, j| if (i >> j) & 1 == 1 { 1.0 } else { -1.0 });
        let names = ["a", "b", "c", "d", "e"];
        let rep = select_features(&m, &names, VifThresholds::default()).unwrap();
        assert!(rep.iterations.is_empty());
        assert_eq!(rep.surviving_features.len(), 5);
        assert_eq!(rep.final_matrix_rank, 5);
    }

    #[test]
    fn single_constant_feature_cannot_survive() {
        let mut m = gaussian(20, 2, 9);
        for i in 0..20 {
            m[(i, 1)] = 3.0;
            m[(i, 0)] = 3.0;
        }
        assert!(matches!(
            select_features(&m, &["a", "b"], VifThresholds::default()),
            Err(Error::EmptySurvivorSet)
        ));
    }

    #[test]
    fn report_round_trips_through_json_with_infinity() {
        let mut m = gaussian(100, 2, 3);
        for i in 0..100 {
            m[(i, 1)] = 1.0 - m[(i, 0)];
        }
        let rep = select_features(&m, &["infill", "contour"], VifThresholds::default()).unwrap();
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"inf\""));
        let back: VifSelectionReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }
}
