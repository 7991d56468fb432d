//! Browser bindings. Each export runs a small synthetic DED study end to end
//! and returns JSON for the page to draw.

use dmdc_core::plant::{generate_ded, DedScenario, MELT_POOL_SIZE, MELT_POOL_TEMP, WORKING_DISTANCE};
use dmdc_core::spectral::{compare_spectrograms, spectrogram_for, DEFAULT_CAP_HZ};
use dmdc_core::validation::{bound_experiment, frequency_study, predicted_dataset, run_lpocv, CvConfig};
use dmdc_core::{dmdc, Result, TimeSeriesDataset};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const OBSERVABLES: [&str; 3] = [MELT_POOL_SIZE, MELT_POOL_TEMP, WORKING_DISTANCE];
const INPUTS: [&str; 6] = ["x", "y", "scan_rate", "laser_power", "powder_feed", "contour_flag"];

fn experiments(seed: u64, noise: f64) -> Result<Vec<TimeSeriesDataset>> {
    let scenario = DedScenario {
        experiments: 6,
        tracks_per_experiment: 8,
        noise_sd: vec![noise, noise * 10.0, noise * 0.5],
        seed,
        ..DedScenario::default()
    };
    Ok(generate_ded(&scenario)?.into_iter().map(|s| s.dataset).collect())
}

#[derive(Serialize)]
pub struct EnvelopeDemo {
    pub observable: String,
    pub time_s: Vec<f64>,
    pub measured: Vec<f64>,
    pub predicted: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub half_width: f64,
    pub coverage: f64,
    pub r2_test: f64,
}

/// Cross-validates on five experiments and bounds the predictions of the
/// sixth with the resulting envelope.
pub fn envelope_demo(seed: u64, noise: f64, observable: usize) -> Result<EnvelopeDemo> {
    let k = observable.min(OBSERVABLES.len() - 1);
    let sets = experiments(seed, noise)?;
    let (held, train) = sets.split_last().expect("six experiments");
    let cfg = CvConfig { p: 1, repeats: 5, seed, ..CvConfig::default() };
    let cv = run_lpocv(train, &INPUTS, &OBSERVABLES, &cfg)?;
    let refs: Vec<&TimeSeriesDataset> = train.iter().collect();
    let model = dmdc::train(&refs, &INPUTS, &OBSERVABLES, &cfg.model)?;
    let b = bound_experiment(&model, &cv.envelope, held)?;
    let measured = b.measured.as_ref().expect("experiment bounds carry measurements");
    let row = |m: &nalgebra::DMatrix<f64>| m.row(k).iter().copied().collect::<Vec<_>>();
    Ok(EnvelopeDemo {
        observable: OBSERVABLES[k].to_string(),
        time_s: (1..=b.predictions.ncols()).map(|t| t as f64 / held.sample_rate_hz).collect(),
        measured: row(measured),
        predicted: row(&b.predictions),
        lower: row(&b.lower),
        upper: row(&b.upper),
        half_width: b.half_width[k],
        coverage: b.coverage(k).unwrap_or(0.0),
        r2_test: cv.report.aggregates[k].r2_test.mean,
    })
}

#[derive(Serialize)]
pub struct SpectrogramDemo {
    pub observable: String,
    pub pulse_length_axis: Vec<f64>,
    pub frequency_axis: Vec<f64>,
    pub experiment: Vec<Vec<f64>>,
    pub model: Vec<Vec<f64>>,
    pub similarity: f64,
}

/// Experiment and model spectrograms of one observable on a coarse grid.
pub fn spectrogram_demo(seed: u64, noise: f64, observable: usize, cap_hz: f64) -> Result<SpectrogramDemo> {
    let k = observable.min(OBSERVABLES.len() - 1);
    let cap = if cap_hz > 0.0 { cap_hz } else { DEFAULT_CAP_HZ };
    let sets = experiments(seed, noise)?;
    let refs: Vec<&TimeSeriesDataset> = sets.iter().collect();
    let model = dmdc::train(&refs, &INPUTS, &OBSERVABLES, &Default::default())?;
    let predicted = sets.iter().map(|d| predicted_dataset(&model, d)).collect::<Result<Vec<_>>>()?;
    let grid = (40, 40);
    let pred_refs: Vec<&TimeSeriesDataset> = predicted.iter().collect();
    let exp = spectrogram_for(&refs, "laser_power", OBSERVABLES[k], grid, cap)?;
    let sim = spectrogram_for(&pred_refs, "laser_power", OBSERVABLES[k], grid, cap)?;
    Ok(SpectrogramDemo {
        observable: OBSERVABLES[k].to_string(),
        similarity: compare_spectrograms(&exp, &sim)?,
        pulse_length_axis: exp.pulse_length_axis,
        frequency_axis: exp.frequency_axis,
        experiment: exp.intensity,
        model: sim.intensity,
    })
}

#[derive(Serialize)]
pub struct FrequencyPoint {
    pub hz: f64,
    pub r2_test: Vec<f64>,
}

/// Mean test R² per observable as the recording rate is decimated.
pub fn frequency_curve(seed: u64, noise: f64) -> Result<Vec<FrequencyPoint>> {
    let sets = experiments(seed, noise)?;
    let cfg = CvConfig { p: 2, repeats: 4, seed, ..CvConfig::default() };
    let rows = frequency_study(&sets, &INPUTS, &OBSERVABLES, &cfg, &[1, 2, 5, 10, 25])?;
    Ok(rows.into_iter().map(|r| FrequencyPoint { hz: r.hz, r2_test: r.r2_test.iter().map(|m| m.mean).collect() }).collect())
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = envelopeDemo)]
pub fn envelope_demo_js(seed: u32, noise: f64, observable: usize) -> std::result::Result<String, JsError> {
    to_js(envelope_demo(seed.into(), noise, observable))
}

#[wasm_bindgen(js_name = spectrogramDemo)]
pub fn spectrogram_demo_js(seed: u32, noise: f64, observable: usize, cap_hz: f64) -> std::result::Result<String, JsError> {
    to_js(spectrogram_demo(seed.into(), noise, observable, cap_hz))
}

#[wasm_bindgen(js_name = frequencyCurve)]
pub fn frequency_curve_js(seed: u32, noise: f64) -> std::result::Result<String, JsError> {
    to_js(frequency_curve(seed.into(), noise))
}
