//! Leave-p-out cross-validation, error metrics and uncertainty envelopes.
//!
//! Each repeat draws `p` whole experiments as the test set, fits on the rest,
//! and scores full self-fed rollouts of every experiment in physical units.
//! The test-side RMSE and its 95% interval across repeats define the
//! envelope `prediction ± (rmse + ci95)` used to bound later predictions.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{decimate, TimeSeriesDataset};
use crate::dmdc::{self, ModelConfig, StateSpaceModel};
use crate::error::{Error, Result};
use crate::stats::{self, MeanCi};

pub fn r2(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual, predicted)?;
    let m = stats::mean(actual);
    let ss_tot: f64 = actual.iter().map(|a| (a - m).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ConstantActual);
    }
    let ss_res: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual, predicted)?;
    let ss: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum();
    Ok((ss / actual.len() as f64).sqrt())
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch(format!("series lengths {} and {}", a.len(), b.len())));
    }
    Ok(())
}

/// One train/test partition of experiment indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub test: Vec<usize>,
    pub train: Vec<usize>,
}

/// Independent uniform draws of `p` test experiments per repeat.
pub fn draw_folds(experiments: usize, p: usize, repeats: usize, seed: u64) -> Result<Vec<Fold>> {
    if p == 0 || experiments <= p {
        return Err(Error::TooFewExperiments { available: experiments, p });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..repeats)
        .map(|index| {
            let mut test = rand::seq::index::sample(&mut rng, experiments, p).into_vec();
            test.sort_unstable();
            let train = (0..experiments).filter(|i| !test.contains(i)).collect();
            Fold { index, test, train }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Whole-experiment simulation from the first measured state.
    #[default]
    Rollout,
    /// Each step predicted from the measured previous step.
    OneStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub p: usize,
    pub repeats: usize,
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub mode: EvalMode,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { p: 3, repeats: 10, seed: 0, model: ModelConfig::default(), mode: EvalMode::Rollout }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableScores {
    pub observable: String,
    pub r2_train: f64,
    pub r2_test: f64,
    pub rmse_train: f64,
    pub rmse_test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub test_ids: Vec<String>,
    pub train_ids: Vec<String>,
    pub scores: Vec<ObservableScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableAggregate {
    pub observable: String,
    pub r2_train: MeanCi,
    pub r2_test: MeanCi,
    pub rmse_train: MeanCi,
    pub rmse_test: MeanCi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub p: usize,
    pub repeats: usize,
    pub seed: u64,
    pub mode: EvalMode,
    pub folds: Vec<FoldResult>,
    pub aggregates: Vec<ObservableAggregate>,
}

impl CvReport {
    pub fn aggregate(&self, observable: &str) -> Option<&ObservableAggregate> {
        self.aggregates.iter().find(|a| a.observable == observable)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeEntry {
    pub observable: String,
    pub rmse: f64,
    pub ci95: f64,
}

impl EnvelopeEntry {
    pub fn half_width(&self) -> f64 {
        self.rmse + self.ci95
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyEnvelope {
    pub entries: Vec<EnvelopeEntry>,
}

impl UncertaintyEnvelope {
    pub fn new(entries: Vec<EnvelopeEntry>) -> Result<Self> {
        for e in &entries {
            if !(e.half_width() > 0.0) {
                return Err(Error::DegenerateEnvelope(e.observable.clone()));
            }
        }
        Ok(Self { entries })
    }

    /// Test-side RMSE mean and interval per observable.
    pub fn from_report(report: &CvReport) -> Result<Self> {
        Self::new(
            report
                .aggregates
                .iter()
                .map(|a| EnvelopeEntry { observable: a.observable.clone(), rmse: a.rmse_test.mean, ci95: a.rmse_test.ci95 })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub report: CvReport,
    pub envelope: UncertaintyEnvelope,
}

/// One series per observable.
type PerObservable = Vec<Vec<f64>>;

/// Concatenated actual and predicted rows `1..m` of each experiment, q rows.
fn collect_predictions(
    model: &StateSpaceModel,
    datasets: &[&TimeSeriesDataset],
    mode: EvalMode,
) -> Result<(PerObservable, PerObservable)> {
    let q = model.observable_count();
    let mut actual = vec![Vec::new(); q];
    let mut predicted = vec![Vec::new(); q];
    for ds in datasets {
        let pred = match mode {
            EvalMode::Rollout => model.predict_experiment(ds)?,
            EvalMode::OneStep => model.one_step_experiment(ds)?,
        };
        for (k, name) in model.observable_names.iter().enumerate() {
            actual[k].extend_from_slice(&ds.column(name)?[1..]);
            predicted[k].extend(pred.row(k).iter().copied());
        }
    }
    Ok((actual, predicted))
}

/// Per-observable (R², RMSE) of a model over a set of experiments.
pub fn score(
    model: &StateSpaceModel,
    datasets: &[&TimeSeriesDataset],
    mode: EvalMode,
) -> Result<Vec<(f64, f64)>> {
    let (actual, predicted) = collect_predictions(model, datasets, mode)?;
    actual
        .iter()
        .zip(&predicted)
        .map(|(a, p)| Ok((r2(a, p)?, rmse(a, p)?)))
        .collect()
}

fn run_fold<S: AsRef<str>>(
    datasets: &[TimeSeriesDataset],
    fold: &Fold,
    inputs: &[S],
    observables: &[S],
    config: &CvConfig,
) -> Result<FoldResult> {
    let train: Vec<&TimeSeriesDataset> = fold.train.iter().map(|&i| &datasets[i]).collect();
    let test: Vec<&TimeSeriesDataset> = fold.test.iter().map(|&i| &datasets[i]).collect();
    let model = dmdc::train(&train, inputs, observables, &config.model)?;
    let tr = score(&model, &train, config.mode)?;
    let te = score(&model, &test, config.mode)?;
    Ok(FoldResult {
        fold_index: fold.index,
        test_ids: test.iter().map(|d| d.experiment_id.clone()).collect(),
        train_ids: train.iter().map(|d| d.experiment_id.clone()).collect(),
        scores: model
            .observable_names
            .iter()
            .enumerate()
            .map(|(k, name)| ObservableScores {
                observable: name.clone(),
                r2_train: tr[k].0,
                r2_test: te[k].0,
                rmse_train: tr[k].1,
                rmse_test: te[k].1,
            })
            .collect(),
    })
}

/// Aggregates fold scores into means with 95% intervals over repeats.
pub fn aggregate_folds(folds: &[FoldResult]) -> Vec<ObservableAggregate> {
    let Some(first) = folds.first() else { return Vec::new() };
    first
        .scores
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let pick = |f: fn(&ObservableScores) -> f64| -> MeanCi {
                MeanCi::from_values(&folds.iter().map(|fr| f(&fr.scores[k])).collect::<Vec<_>>())
            };
            ObservableAggregate {
                observable: s.observable.clone(),
                r2_train: pick(|s| s.r2_train),
                r2_test: pick(|s| s.r2_test),
                rmse_train: pick(|s| s.rmse_train),
                rmse_test: pick(|s| s.rmse_test),
            }
        })
        .collect()
}

pub fn run_lpocv<S: AsRef<str> + Sync>(
    datasets: &[TimeSeriesDataset],
    inputs: &[S],
    observables: &[S],
    config: &CvConfig,
) -> Result<CvOutcome> {
    let folds = draw_folds(datasets.len(), config.p, config.repeats, config.seed)?;
    run_folds(datasets, &folds, inputs, observables, config)
}

/// Cross-validation over pre-drawn folds.
pub fn run_folds<S: AsRef<str> + Sync>(
    datasets: &[TimeSeriesDataset],
    folds: &[Fold],
    inputs: &[S],
    observables: &[S],
    config: &CvConfig,
) -> Result<CvOutcome> {
    let one = |f: &Fold| run_fold(datasets, f, inputs, observables, config);
    #[cfg(feature = "parallel")]
    let results: Vec<Result<FoldResult>> = {
        use rayon::prelude::*;
        folds.par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<FoldResult>> = folds.iter().map(one).collect();
    let folds = results.into_iter().collect::<Result<Vec<_>>>()?;
    let report = CvReport {
        p: config.p,
        repeats: folds.len(),
        seed: config.seed,
        mode: config.mode,
        aggregates: aggregate_folds(&folds),
        folds,
    };
    let envelope = UncertaintyEnvelope::from_report(&report)?;
    Ok(CvOutcome { report, envelope })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: usize,
    pub measured: f64,
    pub bound: f64,
}

/// Predictions with envelope bounds, all q x T in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundedPrediction {
    pub observable_names: Vec<String>,
    pub predictions: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub half_width: Vec<f64>,
    pub measured: Option<DMatrix<f64>>,
    /// Per observable; empty without ground truth.
    pub violations: Vec<Vec<Violation>>,
}

impl BoundedPrediction {
    pub fn coverage(&self, k: usize) -> Option<f64> {
        let m = self.measured.as_ref()?;
        Some(1.0 - self.violations[k].len() as f64 / m.ncols() as f64)
    }
}

fn check_envelope(model: &StateSpaceModel, envelope: &UncertaintyEnvelope) -> Result<Vec<f64>> {
    let names: Vec<&str> = envelope.entries.iter().map(|e| e.observable.as_str()).collect();
    if names != model.observable_names.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::DimensionMismatch(format!(
            "envelope covers {names:?}, model predicts {:?}",
            model.observable_names
        )));
    }
    Ok(envelope.entries.iter().map(EnvelopeEntry::half_width).collect())
}

/// Applies `prediction ± half_width` per observable and flags measured
/// points outside the bounds.
pub fn apply_envelope(
    observable_names: Vec<String>,
    predictions: DMatrix<f64>,
    half_width: Vec<f64>,
    measured: Option<DMatrix<f64>>,
) -> Result<BoundedPrediction> {
    if half_width.len() != predictions.nrows() {
        return Err(Error::DimensionMismatch("envelope width count".into()));
    }
    if let Some(m) = &measured {
        if m.shape() != predictions.shape() {
            return Err(Error::DimensionMismatch(format!(
                "ground truth {:?} vs predictions {:?}",
                m.shape(),
                predictions.shape()
            )));
        }
    }
    let lower = DMatrix::from_fn(predictions.nrows(), predictions.ncols(), |k, t| predictions[(k, t)] - half_width[k]);
    let upper = DMatrix::from_fn(predictions.nrows(), predictions.ncols(), |k, t| predictions[(k, t)] + half_width[k]);
    let violations = match &measured {
        None => vec![Vec::new(); predictions.nrows()],
        Some(m) => (0..predictions.nrows())
            .map(|k| {
                (0..predictions.ncols())
                    .filter_map(|t| {
                        let y = m[(k, t)];
                        if y < lower[(k, t)] {
                            Some(Violation { t, measured: y, bound: lower[(k, t)] })
                        } else if y > upper[(k, t)] {
                            Some(Violation { t, measured: y, bound: upper[(k, t)] })
                        } else {
                            None
                        }
                    })
                    .collect()
            })
            .collect(),
    };
    Ok(BoundedPrediction { observable_names, predictions, lower, upper, half_width, measured, violations })
}

/// Rolls the model out from physical `y0` over physical `inputs` (p x T)
/// and bounds the result with the envelope. `ground_truth` is q x T.
pub fn bound_predictions(
    model: &StateSpaceModel,
    envelope: &UncertaintyEnvelope,
    y0: &[f64],
    inputs: &DMatrix<f64>,
    ground_truth: Option<&DMatrix<f64>>,
) -> Result<BoundedPrediction> {
    let widths = check_envelope(model, envelope)?;
    if y0.len() != model.observable_count() || inputs.nrows() != model.input_count() {
        return Err(Error::DimensionMismatch(format!(
            "y0 {} / inputs {} for model q={} p={}",
            y0.len(),
            inputs.nrows(),
            model.observable_count(),
            model.input_count()
        )));
    }
    let ost = &model.observable_standardizer;
    let ist = &model.input_standardizer;
    let z0 = DVector::from_fn(y0.len(), |k, _| ost.forward(k, y0[k]));
    let u = DMatrix::from_fn(inputs.nrows(), inputs.ncols(), |k, t| ist.forward(k, inputs[(k, t)]));
    let pred = model.to_physical(&model.rollout(&z0, &u)?);
    apply_envelope(model.observable_names.clone(), pred, widths, ground_truth.cloned())
}

/// Bounded rollout of a recorded experiment: starts from its first row and
/// compares rows `1..m` against the measurements.
pub fn bound_experiment(
    model: &StateSpaceModel,
    envelope: &UncertaintyEnvelope,
    ds: &TimeSeriesDataset,
) -> Result<BoundedPrediction> {
    let widths = check_envelope(model, envelope)?;
    let pred = model.predict_experiment(ds)?;
    let obs = ds.matrix_of(&model.observable_names)?;
    let m = obs.nrows();
    let measured = obs.rows(1, m - 1).transpose();
    apply_envelope(model.observable_names.clone(), pred, widths, Some(measured))
}

/// Copy of `ds` whose observables are replaced by the model's self-fed
/// rollout. Row 0 keeps the measured initial state.
pub fn predicted_dataset(model: &StateSpaceModel, ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset> {
    let pred = model.predict_experiment(ds)?;
    let mut out = ds.clone();
    for (k, name) in model.observable_names.iter().enumerate() {
        let mut col = Vec::with_capacity(ds.row_count());
        col.push(ds.column(name)?[0]);
        col.extend(pred.row(k).iter().copied());
        out = out.with_column(name, col)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean: f64,
    pub sd: f64,
    pub skewness: f64,
}

/// Histogram of `actual - predicted`.
pub fn residual_histogram(actual: &[f64], predicted: &[f64], bins: usize) -> Result<Histogram> {
    check_lengths(actual, predicted)?;
    let res: Vec<f64> = actual.iter().zip(predicted).map(|(a, p)| a - p).collect();
    let lo = res.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = res.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (edges, counts) = if lo == hi || bins <= 1 {
        (vec![lo, hi], vec![res.len()])
    } else {
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for r in &res {
            let b = (((r - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        (stats::linspace(lo, hi, bins + 1), counts)
    };
    Ok(Histogram {
        edges,
        counts,
        mean: stats::mean(&res),
        sd: stats::population_sd(&res),
        skewness: stats::skewness(&res),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityData {
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
    /// Least-squares line `predicted ≈ slope * actual + intercept`.
    pub slope: f64,
    pub intercept: f64,
}

pub fn parity_data(actual: &[f64], predicted: &[f64]) -> Result<ParityData> {
    check_lengths(actual, predicted)?;
    let ma = stats::mean(actual);
    let mp = stats::mean(predicted);
    let sxx: f64 = actual.iter().map(|a| (a - ma).powi(2)).sum();
    let sxy: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - ma) * (p - mp)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    Ok(ParityData {
        actual: actual.to_vec(),
        predicted: predicted.to_vec(),
        slope,
        intercept: mp - slope * ma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub factor: usize,
    pub hz: f64,
    pub observables: Vec<String>,
    pub r2_test: Vec<MeanCi>,
}

/// Decimate, refit and cross-validate at each factor.
pub fn frequency_study<S: AsRef<str> + Sync>(
    datasets: &[TimeSeriesDataset],
    inputs: &[S],
    observables: &[S],
    config: &CvConfig,
    factors: &[usize],
) -> Result<Vec<FrequencyRow>> {
    let base = datasets
        .first()
        .ok_or(Error::TooFewExperiments { available: 0, p: config.p })?
        .sample_rate_hz;
    factors
        .iter()
        .map(|&factor| {
            if factor == 0 {
                return Err(Error::Config("decimation factor must be at least 1".into()));
            }
            let coarse: Vec<TimeSeriesDataset> = datasets.iter().map(|d| decimate(d, factor)).collect();
            let out = run_lpocv(&coarse, inputs, observables, config)?;
            Ok(FrequencyRow {
                factor,
                hz: base / factor as f64,
                observables: out.report.aggregates.iter().map(|a| a.observable.clone()).collect(),
                r2_test: out.report.aggregates.iter().map(|a| a.r2_test).collect(),
            })
        })
        .collect()
}
