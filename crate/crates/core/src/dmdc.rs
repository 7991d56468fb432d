//! Dynamic mode decomposition with control.
//!
//! Observables are treated as the full state (`C = I`, `D = 0`), so the
//! model is `y[t+1] = A y[t] + B u[t]`. Given snapshot matrices `Y_t`,
//! `Y_t1` and `U_t`, the stacked operator `G = [A | B]` is
//! `Y_t1 * pinv(Omega)` with `Omega = [Y_t; U_t]`. Writing the SVD of
//! `Omega` as `eta * Sigma * zeta^T` and splitting the rows of `eta` into
//! the observable block `eta_y` and input block `eta_u`:
//!
//! ```text
//! A = Y_t1 * zeta * Sigma^-1 * eta_y^T
//! B = Y_t1 * zeta * Sigma^-1 * eta_u^T
//! ```
//!
//! The SVD is taken of the triangular factor of `[Omega; Y_t1]^T`, computed
//! by streaming Householder QR over snapshot pairs. With
//! `[Omega^T | Y_t1^T] = Q [[R11, R12], [0, R22]]` and `R11 = W S V^T`,
//! `eta = V`, `Sigma = S`, `zeta = Q1 W` and `Y_t1 * zeta = R12^T W`, so the
//! long `zeta` factor never has to be materialized.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::dataset::{
    apply_standardizer, fit_standardizer_pooled, StandardizationParams, TimeSeriesDataset,
};
use crate::error::{Error, Result};
use crate::linalg::{self, TriangularAccumulator};

/// Time-shifted snapshot matrices, one column per (t, t+1) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub observable_names: Vec<String>,
    pub input_names: Vec<String>,
    /// q x N
    pub y_t: DMatrix<f64>,
    /// q x N
    pub y_t1: DMatrix<f64>,
    /// p x N
    pub u_t: DMatrix<f64>,
}

impl SnapshotSet {
    pub fn pair_count(&self) -> usize {
        self.y_t.ncols()
    }

    /// Same pairs with columns reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            observable_names: self.observable_names.clone(),
            input_names: self.input_names.clone(),
            y_t: self.y_t.select_columns(perm),
            y_t1: self.y_t1.select_columns(perm),
            u_t: self.u_t.select_columns(perm),
        }
    }
}

/// Builds snapshot pairs per experiment; pairs never span two experiments.
pub fn build_snapshots<S: AsRef<str>>(
    datasets: &[&TimeSeriesDataset],
    inputs: &[S],
    observables: &[S],
) -> Result<SnapshotSet> {
    let first = datasets
        .first()
        .ok_or_else(|| Error::Config("no datasets to build snapshots from".into()))?;
    let q = observables.len();
    let p = inputs.len();
    let mut total = 0;
    for ds in datasets {
        if ds.sample_rate_hz != first.sample_rate_hz {
            return Err(Error::SchemaMismatch(format!(
                "`{}` sampled at {} Hz, `{}` at {} Hz",
                ds.experiment_id, ds.sample_rate_hz, first.experiment_id, first.sample_rate_hz
            )));
        }
        for name in inputs.iter().chain(observables) {
            if !ds.has_channel(name.as_ref()) {
                return Err(Error::SchemaMismatch(format!(
                    "`{}` lacks channel `{}`",
                    ds.experiment_id,
                    name.as_ref()
                )));
            }
        }
        if ds.row_count() < 2 {
            return Err(Error::TooShort(ds.experiment_id.clone()));
        }
        total += ds.row_count() - 1;
    }

    let mut y_t = DMatrix::zeros(q, total);
    let mut y_t1 = DMatrix::zeros(q, total);
    let mut u_t = DMatrix::zeros(p, total);
    let mut col = 0;
    for ds in datasets {
        let m = ds.row_count();
        for (k, name) in observables.iter().enumerate() {
            let v = ds.column(name.as_ref())?;
            for t in 0..m - 1 {
                y_t[(k, col + t)] = v[t];
                y_t1[(k, col + t)] = v[t + 1];
            }
        }
        for (k, name) in inputs.iter().enumerate() {
            let v = ds.column(name.as_ref())?;
            for t in 0..m - 1 {
                u_t[(k, col + t)] = v[t];
            }
        }
        col += m - 1;
    }
    Ok(SnapshotSet {
        observable_names: observables.iter().map(|s| s.as_ref().to_string()).collect(),
        input_names: inputs.iter().map(|s| s.as_ref().to_string()).collect(),
        y_t,
        y_t1,
        u_t,
    })
}

/// Raw operator estimate from one snapshot set.
#[derive(Debug, Clone, PartialEq)]
pub struct DmdcFit {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub svd_rank_used: usize,
    /// Singular values of `Omega`, descending.
    pub singular_values: Vec<f64>,
}

/// Solves for `A` and `B`. `rank` caps the number of singular triplets kept;
/// by default every singular value above the numerical-rank tolerance is used.
pub fn fit(snapshots: &SnapshotSet, rank: Option<usize>) -> Result<DmdcFit> {
    let q = snapshots.y_t.nrows();
    let p = snapshots.u_t.nrows();
    let n = q + p;
    let pairs = snapshots.pair_count();
    if pairs < n || q == 0 {
        return Err(Error::InsufficientPairs { pairs, unknowns: n });
    }

    let width = n + q;
    let mut acc = TriangularAccumulator::new(width);
    let mut row = vec![0.0; width];
    for t in 0..pairs {
        row[..q].copy_from_slice(snapshots.y_t.column(t).as_slice());
        row[q..n].copy_from_slice(snapshots.u_t.column(t).as_slice());
        row[n..].copy_from_slice(snapshots.y_t1.column(t).as_slice());
        acc.push_row(&row);
    }
    let r = acc.finish();
    let r11 = r.view((0, 0), (n, n)).into_owned();
    let r12 = r.view((0, n), (n, q)).into_owned();

    let svd = r11.svd(true, true);
    let w = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();

    let tol = linalg::default_rank_tolerance(n, pairs);
    let numerical = linalg::rank_from_singular_values(&sv, tol);
    let used = rank.map_or(numerical, |r| r.min(numerical));
    if numerical < n {
        warn!("Omega is rank deficient ({numerical} of {n}); truncating SVD");
    }

    // G = R12^T W_r S_r^-1 V_r^T
    let mut g = DMatrix::zeros(q, n);
    for &k in order.iter().take(used) {
        let s = svd.singular_values[k];
        let left = r12.transpose() * w.column(k) / s;
        g += left * vt.row(k);
    }
    Ok(DmdcFit {
        a: g.columns(0, q).into_owned(),
        b: g.columns(q, p).into_owned(),
        svd_rank_used: used,
        singular_values: sv,
    })
}

/// Self-fed simulation: `y[1] = A y0 + B u[0]`, `y[t+1] = A y[t] + B u[t]`.
/// `inputs` is p x T; the result is q x T.
pub fn rollout(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    y0: &DVector<f64>,
    inputs: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    rollout_affine(a, b, None, y0, inputs)
}

/// [`rollout`] with a constant term added at every step.
pub fn rollout_affine(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    offset: Option<&DVector<f64>>,
    y0: &DVector<f64>,
    inputs: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let q = a.nrows();
    if a.ncols() != q
        || b.nrows() != q
        || y0.len() != q
        || inputs.nrows() != b.ncols()
        || offset.is_some_and(|c| c.len() != q)
    {
        return Err(Error::DimensionMismatch(format!(
            "A {}x{}, B {}x{}, y0 {}, inputs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols(),
            y0.len(),
            inputs.nrows(),
            inputs.ncols()
        )));
    }
    let steps = inputs.ncols();
    let mut out = DMatrix::zeros(q, steps);
    let mut state = y0.clone();
    let mut next = DVector::zeros(q);
    for t in 0..steps {
        next.gemv(1.0, a, &state, 0.0);
        next.gemv(1.0, b, &inputs.column(t), 1.0);
        if let Some(c) = offset {
            next += c;
        }
        out.set_column(t, &next);
        std::mem::swap(&mut state, &mut next);
    }
    Ok(out)
}

/// Fitted surrogate with its standardizers. Predictions run in standardized
/// space and are mapped back to physical units.
///
/// Centering turns `y[t+1] = A y[t] + B u[t]` into an affine map in
/// standardized coordinates, so a model trained on centered data carries
/// the constant term in `offset`. It is zero when nothing was centered.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// q
    pub offset: DVector<f64>,
    pub observable_names: Vec<String>,
    pub input_names: Vec<String>,
    pub input_standardizer: StandardizationParams,
    pub observable_standardizer: StandardizationParams,
    pub sample_rate_hz: f64,
    pub svd_rank_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub standardize_inputs: bool,
    pub standardize_observables: bool,
    pub rank: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { standardize_inputs: true, standardize_observables: true, rank: None }
    }
}

/// Fits standardizers on the pooled training data, then the operators.
pub fn train<S: AsRef<str>>(
    datasets: &[&TimeSeriesDataset],
    inputs: &[S],
    observables: &[S],
    config: &ModelConfig,
) -> Result<StateSpaceModel> {
    let input_names: Vec<String> = inputs.iter().map(|s| s.as_ref().to_string()).collect();
    let observable_names: Vec<String> = observables.iter().map(|s| s.as_ref().to_string()).collect();
    let input_std = if config.standardize_inputs {
        fit_standardizer_pooled(datasets, &input_names)?
    } else {
        StandardizationParams::identity(&input_names)
    };
    let obs_std = if config.standardize_observables {
        fit_standardizer_pooled(datasets, &observable_names)?
    } else {
        StandardizationParams::identity(&observable_names)
    };
    let standardized = datasets
        .iter()
        .map(|ds| apply_standardizer(ds, &input_std).and_then(|d| apply_standardizer(&d, &obs_std)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&TimeSeriesDataset> = standardized.iter().collect();
    let mut snaps = build_snapshots(&refs, &input_names, &observable_names)?;
    let q = observable_names.len();
    let p = input_names.len();
    let centered = input_std.mean.iter().chain(&obs_std.mean).any(|m| *m != 0.0);
    if centered {
        // constant regressor whose coefficient column is the offset
        snaps.u_t = snaps.u_t.insert_row(p, 1.0);
    }
    let fitted = fit(&snaps, config.rank)?;
    let offset = if centered { fitted.b.column(p).into_owned() } else { DVector::zeros(q) };
    Ok(StateSpaceModel {
        a: fitted.a,
        b: fitted.b.columns(0, p).into_owned(),
        offset,
        observable_names,
        input_names,
        input_standardizer: input_std,
        observable_standardizer: obs_std,
        sample_rate_hz: datasets[0].sample_rate_hz,
        svd_rank_used: fitted.svd_rank_used,
    })
}

impl StateSpaceModel {
    pub fn observable_count(&self) -> usize {
        self.observable_names.len()
    }

    pub fn input_count(&self) -> usize {
        self.input_names.len()
    }

    /// Rollout in standardized space.
    pub fn rollout(&self, y0: &DVector<f64>, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        rollout_affine(&self.a, &self.b, Some(&self.offset), y0, inputs)
    }

    /// Standardized inputs of `ds` as p x T (all rows).
    pub fn standardized_inputs(&self, ds: &TimeSeriesDataset) -> Result<DMatrix<f64>> {
        let raw = ds.matrix_of(&self.input_names)?;
        let st = &self.input_standardizer;
        Ok(DMatrix::from_fn(self.input_count(), raw.nrows(), |k, t| st.forward(k, raw[(t, k)])))
    }

    /// Measured observables of `ds` in standardized space, q x T.
    pub fn standardized_observables(&self, ds: &TimeSeriesDataset) -> Result<DMatrix<f64>> {
        let raw = ds.matrix_of(&self.observable_names)?;
        let st = &self.observable_standardizer;
        Ok(DMatrix::from_fn(self.observable_count(), raw.nrows(), |k, t| st.forward(k, raw[(t, k)])))
    }

    pub fn to_physical(&self, standardized: &DMatrix<f64>) -> DMatrix<f64> {
        let st = &self.observable_standardizer;
        DMatrix::from_fn(standardized.nrows(), standardized.ncols(), |k, t| {
            st.inverse(k, standardized[(k, t)])
        })
    }

    /// Predicts rows `1..m` of an experiment from its measured first row and
    /// its inputs, self-fed. Returns q x (m - 1) in physical units.
    pub fn predict_experiment(&self, ds: &TimeSeriesDataset) -> Result<DMatrix<f64>> {
        if ds.row_count() < 2 {
            return Err(Error::TooShort(ds.experiment_id.clone()));
        }
        let u = self.standardized_inputs(ds)?;
        let y = self.standardized_observables(ds)?;
        let y0 = y.column(0).into_owned();
        let steps = u.columns(0, u.ncols() - 1).into_owned();
        Ok(self.to_physical(&self.rollout(&y0, &steps)?))
    }

    /// One-step-ahead predictions of rows `1..m` from the measured previous
    /// row. Diagnostic only.
    pub fn one_step_experiment(&self, ds: &TimeSeriesDataset) -> Result<DMatrix<f64>> {
        if ds.row_count() < 2 {
            return Err(Error::TooShort(ds.experiment_id.clone()));
        }
        let u = self.standardized_inputs(ds)?;
        let y = self.standardized_observables(ds)?;
        let m = ds.row_count();
        let mut pred = &self.a * y.columns(0, m - 1) + &self.b * u.columns(0, m - 1);
        for mut col in pred.column_iter_mut() {
            col += &self.offset;
        }
        Ok(self.to_physical(&pred))
    }
}
