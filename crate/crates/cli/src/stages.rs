//! Pipeline stages. Each stage reads what earlier stages produced in memory
//! and writes its own artifacts; a failing stage leaves earlier files alone.

use std::fmt;
use std::path::{Path, PathBuf};

use dmdc_core::dataset::{constant_channels, impute_off_state, load_schema, ChannelKind};
use dmdc_core::distribution::{split_shift_report, WassersteinResult};
use dmdc_core::dmdc::train;
use dmdc_core::features::{select_features, VifSelectionReport};
use dmdc_core::model_io;
use dmdc_core::spectral::{build_spectrogram, compare_spectrograms, pulse_spectra_multi, segment_pulses, Spectrogram};
use dmdc_core::stats::MeanCi;
use dmdc_core::validation::{
    bound_experiment, draw_folds, frequency_study, parity_data, predicted_dataset, residual_histogram, run_folds,
    CvConfig, CvOutcome, Fold, FrequencyRow, UncertaintyEnvelope,
};
use dmdc_core::{ChannelSpec, Error, ExperimentManifest, ModelConfig, StateSpaceModel, TimeSeriesDataset};
use log::{info, warn};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::artifacts::{ArtifactDir, Cell, Table};
use crate::config::{Provenance, RunConfig};

#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {}

pub type StageResult<T> = std::result::Result<T, StageError>;

pub trait InStage<T> {
    fn stage(self, stage: &'static str) -> StageResult<T>;
}

impl<T> InStage<T> for dmdc_core::Result<T> {
    fn stage(self, stage: &'static str) -> StageResult<T> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// A validated configuration with its manifest, before any data is read.
pub struct Run {
    pub config: RunConfig,
    base: PathBuf,
    pub manifest: ExperimentManifest,
    pub out: ArtifactDir,
}

pub struct Loaded {
    pub datasets: Vec<TimeSeriesDataset>,
    pub inputs: Vec<String>,
    pub observables: Vec<String>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Run {
    /// Validates the config and manifest; fails before touching data when
    /// `p` is not smaller than the experiment count.
    pub fn open(config: RunConfig, base: PathBuf) -> StageResult<Self> {
        config.validate().stage("config")?;
        let manifest = ExperimentManifest::load(&resolve(&base, &config.manifest))
            .map_err(|e| match e {
                Error::Io(io) => Error::Config(format!("manifest: {io}")),
                Error::Json(j) => Error::Config(format!("manifest: {j}")),
                other => other,
            })
            .stage("config")?;
        if config.cv.p >= manifest.entries.len() {
            return Err(Error::TooFewExperiments { available: manifest.entries.len(), p: config.cv.p }).stage("config");
        }
        if !resolve(&base, &config.schema).is_file() {
            return Err(Error::Config(format!("schema {} does not exist", config.schema.display()))).stage("config");
        }
        let out = ArtifactDir::create(resolve(&base, &config.output_dir), Provenance::of(&config)).stage("config")?;
        Ok(Self { config, base, manifest, out })
    }

    fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn cv_config(&self, model: ModelConfig) -> CvConfig {
        CvConfig { p: self.config.cv.p, repeats: self.config.cv.repeats, seed: self.seed(), model, mode: self.config.cv.mode }
    }

    pub fn folds(&self, experiments: usize) -> StageResult<Vec<Fold>> {
        draw_folds(experiments, self.config.cv.p, self.config.cv.repeats, self.seed()).stage("cv")
    }

    pub fn ingest(&self) -> StageResult<Loaded> {
        let schema: Vec<ChannelSpec> = load_schema(&resolve(&self.base, &self.config.schema)).stage("ingest")?;
        let loaded = self.manifest.load_datasets(&schema).stage("ingest")?;
        let (datasets, reports): (Vec<_>, Vec<_>) = loaded.into_iter().unzip();
        let in_all = |c: &ChannelSpec| datasets.iter().all(|d: &TimeSeriesDataset| d.has_channel(&c.name));
        let observables: Vec<String> = schema
            .iter()
            .filter(|c| c.kind == ChannelKind::Observable && in_all(c))
            .map(|c| c.name.clone())
            .collect();
        let inputs: Vec<String> = match &self.config.inputs {
            Some(list) => list.clone(),
            None => schema
                .iter()
                .filter(|c| c.kind == ChannelKind::Input && in_all(c))
                .map(|c| c.name.clone())
                .collect(),
        };
        if observables.is_empty() || inputs.is_empty() {
            return Err(Error::SchemaMismatch("need at least one input and one observable".into())).stage("ingest");
        }
        self.out.json("ingest_report.json", &reports).stage("ingest")?;
        info!("ingested {} experiments", datasets.len());
        Ok(Loaded { datasets, inputs, observables })
    }

    pub fn impute(&self, loaded: &mut Loaded) -> StageResult<()> {
        if self.config.imputation.is_empty() {
            return Ok(());
        }
        #[derive(Serialize)]
        struct Record {
            experiment_id: String,
            channel: String,
            imputed_samples: usize,
        }
        let mut records = Vec::new();
        for ds in loaded.datasets.iter_mut() {
            for d in &self.config.imputation {
                let before = ds.column(&d.channel).stage("impute")?.to_vec();
                *ds = impute_off_state(ds, &d.channel, d.sentinel, &d.gate_channel).stage("impute")?;
                let after = ds.column(&d.channel).stage("impute")?;
                let imputed_samples = before.iter().zip(after).filter(|(a, b)| a != b).count();
                records.push(Record { experiment_id: ds.experiment_id.clone(), channel: d.channel.clone(), imputed_samples });
            }
        }
        self.out.json("imputation_report.json", &records).stage("impute")?;
        Ok(())
    }

    pub fn select_features(&self, loaded: &Loaded) -> StageResult<VifSelectionReport> {
        let rows: usize = loaded.datasets.iter().map(TimeSeriesDataset::row_count).sum();
        let k = loaded.inputs.len();
        let mut pooled = DMatrix::zeros(rows, k);
        let mut r0 = 0;
        for ds in &loaded.datasets {
            let m = ds.matrix_of(&loaded.inputs).stage("select-features")?;
            pooled.view_mut((r0, 0), (m.nrows(), k)).copy_from(&m);
            r0 += m.nrows();
        }
        let report = select_features(&pooled, &loaded.inputs, self.config.vif).stage("select-features")?;
        self.out.json("vif_report.json", &report).stage("select-features")?;
        info!("{} of {} inputs survive selection", report.surviving_features.len(), k);
        Ok(report)
    }

    pub fn dist_report(&self, loaded: &Loaded, folds: &[Fold]) -> StageResult<Vec<WassersteinResult>> {
        let results = split_shift_report(&loaded.datasets, folds, &loaded.observables).stage("dist-report")?;
        self.out.json("dist_report.json", &results).stage("dist-report")?;
        let mut t = Table::new(&["pair", "channel", "mean_distance", "ci95", "repeats"]);
        for r in &results {
            t.row(&[
                Cell::Text(r.pair_label.clone()),
                Cell::Text(r.channel.clone()),
                Cell::Num(r.mean_distance),
                Cell::Num(r.ci95_halfwidth),
                Cell::Int(r.repeats),
            ]);
        }
        self.out.csv("dist_report.csv", &t).stage("dist-report")?;
        Ok(results)
    }

    pub fn cv(&self, loaded: &Loaded, folds: &[Fold], inputs: &[String]) -> StageResult<CvOutcome> {
        let cfg = self.cv_config(self.config.model);
        let outcome = run_folds(&loaded.datasets, folds, inputs, &loaded.observables, &cfg).stage("cv")?;
        self.out
            .json_object(
                "cv_report.json",
                serde_json::json!({ "inputs": inputs, "report": &outcome.report }),
            )
            .stage("cv")?;
        self.out.json("envelope.json", &outcome.envelope).stage("cv")?;
        let mut t = Table::new(&["observable", "metric", "mean", "ci95"]);
        for a in &outcome.report.aggregates {
            for (metric, v) in [("r2_train", a.r2_train), ("r2_test", a.r2_test), ("rmse_train", a.rmse_train), ("rmse_test", a.rmse_test)] {
                t.row(&[Cell::Text(a.observable.clone()), Cell::Text(metric.into()), Cell::Num(v.mean), Cell::Num(v.ci95)]);
            }
        }
        self.out.csv("cv_report.csv", &t).stage("cv")?;
        Ok(outcome)
    }

    /// Cross-validates again with standardization switched off and records
    /// both test R² values per observable.
    pub fn standardization_comparison(&self, loaded: &Loaded, folds: &[Fold], inputs: &[String], baseline: &CvOutcome) -> StageResult<()> {
        let raw_cfg = ModelConfig { standardize_inputs: false, standardize_observables: false, ..self.config.model };
        if raw_cfg == self.config.model {
            return Ok(());
        }
        let raw = run_folds(&loaded.datasets, folds, inputs, &loaded.observables, &self.cv_config(raw_cfg));
        #[derive(Serialize)]
        struct Row {
            observable: String,
            r2_test_standardized: MeanCi,
            r2_test_unstandardized: Option<MeanCi>,
        }
        let (rows, note) = match &raw {
            Ok(r) => (
                baseline
                    .report
                    .aggregates
                    .iter()
                    .zip(&r.report.aggregates)
                    .map(|(a, b)| Row { observable: a.observable.clone(), r2_test_standardized: a.r2_test, r2_test_unstandardized: Some(b.r2_test) })
                    .collect::<Vec<_>>(),
                None,
            ),
            Err(e) => (
                baseline
                    .report
                    .aggregates
                    .iter()
                    .map(|a| Row { observable: a.observable.clone(), r2_test_standardized: a.r2_test, r2_test_unstandardized: None })
                    .collect(),
                Some(e.to_string()),
            ),
        };
        self.out
            .json_object("standardization_comparison.json", serde_json::json!({ "rows": rows, "unstandardized_error": note }))
            .stage("cv")?;
        Ok(())
    }

    pub fn fit(&self, loaded: &Loaded, inputs: &[String]) -> StageResult<StateSpaceModel> {
        let refs: Vec<&TimeSeriesDataset> = loaded.datasets.iter().collect();
        let model = train(&refs, inputs, &loaded.observables, &self.config.model).stage("fit")?;
        let mut value: serde_json::Value = serde_json::from_str(&model_io::to_json(&model).stage("fit")?)
            .map_err(Error::from)
            .stage("fit")?;
        if let Some(map) = value.as_object_mut() {
            map.insert("provenance".into(), serde_json::to_value(&self.out.provenance).map_err(Error::from).stage("fit")?);
        }
        std::fs::write(self.out.path("model.json"), serde_json::to_string_pretty(&value).map_err(Error::from).stage("fit")? + "\n")
            .map_err(Error::from)
            .stage("fit")?;
        Ok(model)
    }

    pub fn predict(&self, loaded: &Loaded, model: &StateSpaceModel, envelope: &UncertaintyEnvelope) -> StageResult<Vec<TimeSeriesDataset>> {
        let obs = &model.observable_names;
        let mut header = vec!["experiment_id".to_string(), "t_index".into(), "time_s".into()];
        for o in obs {
            for suffix in ["predicted", "lower", "upper", "measured", "violation"] {
                header.push(format!("{o}_{suffix}"));
            }
        }
        let mut bounded = Table::new(&header);
        let mut parity = Table::new(&["experiment_id", "observable", "actual", "predicted"]);
        let mut all_actual = vec![Vec::new(); obs.len()];
        let mut all_pred = vec![Vec::new(); obs.len()];
        let mut coverage = vec![(0usize, 0usize); obs.len()];
        let mut predicted = Vec::with_capacity(loaded.datasets.len());
        for ds in &loaded.datasets {
            let b = bound_experiment(model, envelope, ds).stage("predict")?;
            let measured = b.measured.as_ref().expect("experiment bounds carry measurements");
            let dt = 1.0 / ds.sample_rate_hz;
            for t in 0..b.predictions.ncols() {
                let mut row = vec![Cell::Text(ds.experiment_id.clone()), Cell::Int(t + 1), Cell::Num((t + 1) as f64 * dt)];
                for k in 0..obs.len() {
                    let (lo, hi, y) = (b.lower[(k, t)], b.upper[(k, t)], measured[(k, t)]);
                    row.push(Cell::Num(b.predictions[(k, t)]));
                    row.push(Cell::Num(lo));
                    row.push(Cell::Num(hi));
                    row.push(Cell::Num(y));
                    row.push(Cell::Int(usize::from(y < lo || y > hi)));
                }
                bounded.row(&row);
            }
            for (k, o) in obs.iter().enumerate() {
                coverage[k].0 += b.violations[k].len();
                coverage[k].1 += b.predictions.ncols();
                for t in 0..b.predictions.ncols() {
                    parity.row(&[
                        Cell::Text(ds.experiment_id.clone()),
                        Cell::Text(o.clone()),
                        Cell::Num(measured[(k, t)]),
                        Cell::Num(b.predictions[(k, t)]),
                    ]);
                }
                all_actual[k].extend(measured.row(k).iter().copied());
                all_pred[k].extend(b.predictions.row(k).iter().copied());
            }
            predicted.push(predicted_dataset(model, ds).stage("predict")?);
        }
        self.out.csv("bounded_predictions.csv", &bounded).stage("predict")?;
        self.out.csv("parity.csv", &parity).stage("predict")?;

        #[derive(Serialize)]
        struct Summary {
            observable: String,
            parity_slope: f64,
            parity_intercept: f64,
            half_width: f64,
            violations: usize,
            points: usize,
            coverage: f64,
            residual_mean: f64,
            residual_sd: f64,
            residual_skewness: f64,
        }
        let mut hist = Table::new(&["observable", "bin_lower", "bin_upper", "count"]);
        let mut summary = Vec::new();
        for (k, o) in obs.iter().enumerate() {
            let p = parity_data(&all_actual[k], &all_pred[k]).stage("predict")?;
            let h = residual_histogram(&all_actual[k], &all_pred[k], self.config.histogram_bins).stage("predict")?;
            for (i, c) in h.counts.iter().enumerate() {
                hist.row(&[Cell::Text(o.clone()), Cell::Num(h.edges[i]), Cell::Num(h.edges[i + 1]), Cell::Int(*c)]);
            }
            let (viol, pts) = coverage[k];
            summary.push(Summary {
                observable: o.clone(),
                parity_slope: p.slope,
                parity_intercept: p.intercept,
                half_width: envelope.entries[k].half_width(),
                violations: viol,
                points: pts,
                coverage: 1.0 - viol as f64 / pts.max(1) as f64,
                residual_mean: h.mean,
                residual_sd: h.sd,
                residual_skewness: h.skewness,
            });
        }
        self.out.csv("histogram.csv", &hist).stage("predict")?;
        self.out.json("prediction_summary.json", &summary).stage("predict")?;
        self.geometry(&predicted, loaded, obs)?;
        Ok(predicted)
    }

    /// Predicted observables joined with the position channels.
    fn geometry(&self, predicted: &[TimeSeriesDataset], loaded: &Loaded, obs: &[String]) -> StageResult<()> {
        let g = &self.config.geometry;
        let axes = [g.x.as_str(), g.y.as_str(), g.z.as_str()];
        if !loaded.datasets.iter().all(|d| axes.iter().all(|a| d.has_channel(a))) {
            warn!("position channels {axes:?} missing; skipping geometry.csv");
            return Ok(());
        }
        let mut header: Vec<String> = vec!["experiment_id".into(), "t_index".into(), "x".into(), "y".into(), "z".into()];
        for o in obs {
            header.push(format!("{o}_predicted"));
            header.push(format!("{o}_measured"));
        }
        let mut t = Table::new(&header);
        for (pred, meas) in predicted.iter().zip(&loaded.datasets) {
            let pos: Vec<&[f64]> = axes.iter().map(|a| meas.column(a)).collect::<dmdc_core::Result<_>>().stage("predict")?;
            let p: Vec<&[f64]> = obs.iter().map(|o| pred.column(o)).collect::<dmdc_core::Result<_>>().stage("predict")?;
            let m: Vec<&[f64]> = obs.iter().map(|o| meas.column(o)).collect::<dmdc_core::Result<_>>().stage("predict")?;
            for i in 0..meas.row_count() {
                let mut row = vec![Cell::Text(meas.experiment_id.clone()), Cell::Int(i), Cell::Num(pos[0][i]), Cell::Num(pos[1][i]), Cell::Num(pos[2][i])];
                for k in 0..obs.len() {
                    row.push(Cell::Num(p[k][i]));
                    row.push(Cell::Num(m[k][i]));
                }
                t.row(&row);
            }
        }
        self.out.csv("geometry.csv", &t).stage("predict")?;
        Ok(())
    }

    /// Experiment spectrograms and, when `predicted` is given, model
    /// spectrograms on the same pulse segmentation with their similarity.
    pub fn spectrogram(&self, loaded: &Loaded, predicted: Option<&[TimeSeriesDataset]>) -> StageResult<()> {
        let sc = &self.config.spectrogram;
        let grid = (sc.grid[0], sc.grid[1]);
        let observables = sc.observables.clone().unwrap_or_else(|| loaded.observables.clone());
        let measured: Vec<&TimeSeriesDataset> = loaded.datasets.iter().collect();
        let segments = measured
            .iter()
            .map(|d| Ok(segment_pulses(d.column(&sc.power_channel)?, d.sample_rate_hz)))
            .collect::<dmdc_core::Result<Vec<_>>>()
            .stage("spectrogram")?;

        #[derive(Serialize)]
        struct Entry {
            observable: String,
            experiment_peak_amplitude: f64,
            model_peak_amplitude: Option<f64>,
            similarity: Option<f64>,
        }
        let mut entries = Vec::new();
        let mut axes: Option<(Vec<f64>, Vec<f64>, f64, f64)> = None;
        for (i, o) in observables.iter().enumerate() {
            let exp = build_spectrogram(&pulse_spectra_multi(&measured, o, &segments).stage("spectrogram")?, grid, sc.cap_hz)
                .stage("spectrogram")?;
            self.out.csv(&format!("spectrogram_{o}_experiment.csv"), &grid_table(&exp)).stage("spectrogram")?;
            if i == 0 {
                self.out.csv("spectrogram.csv", &grid_table(&exp)).stage("spectrogram")?;
            }
            let mut entry = Entry { observable: o.clone(), experiment_peak_amplitude: exp.peak_amplitude, model_peak_amplitude: None, similarity: None };
            if let Some(pred) = predicted {
                let refs: Vec<&TimeSeriesDataset> = pred.iter().collect();
                let model = build_spectrogram(&pulse_spectra_multi(&refs, o, &segments).stage("spectrogram")?, grid, sc.cap_hz)
                    .stage("spectrogram")?;
                self.out.csv(&format!("spectrogram_{o}_model.csv"), &grid_table(&model)).stage("spectrogram")?;
                entry.model_peak_amplitude = Some(model.peak_amplitude);
                entry.similarity = Some(compare_spectrograms(&exp, &model).stage("spectrogram")?);
            }
            axes.get_or_insert((exp.pulse_length_axis.clone(), exp.frequency_axis.clone(), exp.nyquist_hz, exp.display_cap_hz));
            entries.push(entry);
        }
        let (pulse_length_axis, frequency_axis, nyquist_hz, display_cap_hz) = axes.unwrap_or_default();
        self.out
            .json_object(
                "spectrogram.json",
                serde_json::json!({
                    "power_channel": sc.power_channel,
                    "amplitude": "one-sided |X_k| / N of the mean-removed pulse window",
                    "normalization": "divided by the grid maximum",
                    "pulse_length_axis_s": pulse_length_axis,
                    "frequency_axis_hz": frequency_axis,
                    "nyquist_hz": nyquist_hz,
                    "display_cap_hz": display_cap_hz,
                    "pulses": segments.iter().map(Vec::len).sum::<usize>(),
                    "observables": entries,
                }),
            )
            .stage("spectrogram")?;
        Ok(())
    }

    pub fn freq_study(&self, loaded: &Loaded, inputs: &[String], factors: &[usize]) -> StageResult<Vec<FrequencyRow>> {
        let rows = frequency_study(&loaded.datasets, inputs, &loaded.observables, &self.cv_config(self.config.model), factors)
            .stage("freq-study")?;
        let mut header = vec!["factor".to_string(), "hz".into()];
        for o in &loaded.observables {
            header.push(format!("{o}_r2_test"));
            header.push(format!("{o}_r2_test_ci95"));
        }
        let mut t = Table::new(&header);
        for r in &rows {
            let mut row = vec![Cell::Int(r.factor), Cell::Num(r.hz)];
            for m in &r.r2_test {
                row.push(Cell::Num(m.mean));
                row.push(Cell::Num(m.ci95));
            }
            t.row(&row);
        }
        self.out.csv("freq_study.csv", &t).stage("freq-study")?;
        self.out.json("freq_study.json", &rows).stage("freq-study")?;
        Ok(rows)
    }

    pub fn constant_inputs(&self, loaded: &Loaded) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for ds in &loaded.datasets {
            for c in constant_channels(ds) {
                if loaded.inputs.contains(&c) && !out.contains(&c) {
                    out.push(c);
                }
            }
        }
        out
    }
}

fn grid_table(sg: &Spectrogram) -> Table {
    let mut header = vec!["pulse_length_s".to_string()];
    header.extend(sg.frequency_axis.iter().map(|f| format!("{f}")));
    let mut t = Table::new(&header);
    for (len, row) in sg.pulse_length_axis.iter().zip(&sg.intensity) {
        let mut cells = vec![Cell::Num(*len)];
        cells.extend(row.iter().map(|v| Cell::Num(*v)));
        t.row(&cells);
    }
    t
}
