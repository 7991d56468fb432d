//! Pulse-length spectrograms.
//!
//! The commanded laser power is a train of square pulses. Each pulse window
//! of an observable is mean-removed and transformed; windows with the same
//! sample count are averaged, and the ragged set of spectra is resampled onto
//! a (pulse length x frequency) grid normalized to a peak of one.
//!
//! Spectra are one-sided amplitudes `|X_k| / N` for `k = 0..=N/2`.

use std::collections::BTreeMap;
use std::sync::Arc;

use log::warn;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::stats;

pub const MIN_SEGMENT_SAMPLES: usize = 4;
pub const DEFAULT_GRID: (usize, usize) = (100, 100);
pub const DEFAULT_CAP_HZ: f64 = 1.0;

/// Maximal run of positive commanded power, `start..end` (end exclusive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSegment {
    pub start_index: usize,
    pub end_index: usize,
    pub length_s: f64,
    pub power_level: f64,
}

impl PulseSegment {
    pub fn samples(&self) -> usize {
        self.end_index - self.start_index
    }
}

pub fn segment_pulses(power: &[f64], sample_rate_hz: f64) -> Vec<PulseSegment> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < power.len() {
        if power[i] > 0.0 {
            let start = i;
            while i < power.len() && power[i] > 0.0 {
                i += 1;
            }
            out.push(PulseSegment {
                start_index: start,
                end_index: i,
                length_s: (i - start) as f64 / sample_rate_hz,
                power_level: stats::mean(&power[start..i]),
            });
        } else {
            i += 1;
        }
    }
    out
}

fn fft_of(plan: &Arc<dyn Fft<f64>>, values: &[f64]) -> Vec<Complex<f64>> {
    let m = stats::mean(values);
    let mut buf: Vec<Complex<f64>> = values.iter().map(|v| Complex::new(v - m, 0.0)).collect();
    plan.process(&mut buf);
    buf
}

/// One-sided amplitude spectrum of a mean-removed window.
pub fn amplitude_spectrum(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let plan = FftPlanner::new().plan_fft_forward(n);
    fft_of(&plan, values)[..=n / 2].iter().map(|c| c.norm() / n as f64).collect()
}

/// Relative Parseval residual `|sum |X_k|^2 / N - sum x^2| / sum x^2` of a
/// mean-removed window; zero for a constant window.
pub fn parseval_residual(values: &[f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let plan = FftPlanner::new().plan_fft_forward(n);
    let spec = fft_of(&plan, values);
    let m = stats::mean(values);
    let energy: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    let spectral: f64 = spec.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
    if energy == 0.0 {
        return spectral;
    }
    (spectral - energy).abs() / energy
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumBucket {
    pub samples: usize,
    pub length_s: f64,
    pub count: usize,
    /// Averaged amplitude at `k * sample_rate / samples` Hz.
    pub amplitude: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSpectra {
    pub observable: String,
    pub sample_rate_hz: f64,
    /// Sorted by pulse length.
    pub buckets: Vec<SpectrumBucket>,
}

pub fn pulse_spectra(ds: &TimeSeriesDataset, observable: &str, segments: &[PulseSegment]) -> Result<PulseSpectra> {
    pulse_spectra_multi(&[ds], observable, &[segments.to_vec()])
}

/// Pools pulses from several experiments; `segments[i]` belongs to `datasets[i]`.
pub fn pulse_spectra_multi(
    datasets: &[&TimeSeriesDataset],
    observable: &str,
    segments: &[Vec<PulseSegment>],
) -> Result<PulseSpectra> {
    if datasets.len() != segments.len() {
        return Err(Error::DimensionMismatch("one segment list per dataset".into()));
    }
    let rate = datasets.first().map_or(0.0, |d| d.sample_rate_hz);
    let mut sums: BTreeMap<usize, (usize, Vec<f64>)> = BTreeMap::new();
    let mut planner = FftPlanner::new();
    let mut skipped = 0;
    for (ds, segs) in datasets.iter().zip(segments) {
        if ds.sample_rate_hz != rate {
            return Err(Error::SchemaMismatch("pulse spectra need a common sample rate".into()));
        }
        let values = ds.column(observable)?;
        for s in segs {
            let n = s.samples();
            if n < MIN_SEGMENT_SAMPLES || s.end_index > values.len() {
                skipped += 1;
                continue;
            }
            let plan = planner.plan_fft_forward(n);
            let spec = fft_of(&plan, &values[s.start_index..s.end_index]);
            let entry = sums.entry(n).or_insert_with(|| (0, vec![0.0; n / 2 + 1]));
            entry.0 += 1;
            for (acc, c) in entry.1.iter_mut().zip(&spec) {
                *acc += c.norm() / n as f64;
            }
        }
    }
    if skipped > 0 {
        warn!("skipped {skipped} pulse segment(s) shorter than {MIN_SEGMENT_SAMPLES} samples");
    }
    Ok(PulseSpectra {
        observable: observable.to_string(),
        sample_rate_hz: rate,
        buckets: sums
            .into_iter()
            .map(|(samples, (count, sum))| SpectrumBucket {
                samples,
                length_s: samples as f64 / rate,
                count,
                amplitude: sum.into_iter().map(|v| v / count as f64).collect(),
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    pub pulse_length_axis: Vec<f64>,
    pub frequency_axis: Vec<f64>,
    /// `intensity[i][j]` at pulse length `i`, frequency `j`.
    pub intensity: Vec<Vec<f64>>,
    pub nyquist_hz: f64,
    pub display_cap_hz: f64,
    /// Peak amplitude before normalization.
    pub peak_amplitude: f64,
}

/// Linear interpolation of one bucket's spectrum at frequency `f`.
fn bucket_at(b: &SpectrumBucket, rate: f64, f: f64) -> f64 {
    let df = rate / b.samples as f64;
    let x = f / df;
    let last = b.amplitude.len() - 1;
    if x >= last as f64 {
        return b.amplitude[last];
    }
    let k = x.floor() as usize;
    let w = x - k as f64;
    b.amplitude[k] * (1.0 - w) + b.amplitude[k + 1] * w
}

pub fn build_spectrogram(spectra: &PulseSpectra, grid: (usize, usize), cap_hz: f64) -> Result<Spectrogram> {
    let (nl, nf) = grid;
    if spectra.buckets.len() < 2 {
        return Err(Error::InsufficientPulseLengthDiversity(spectra.buckets.len()));
    }
    if nl < 2 || nf < 2 || !(cap_hz > 0.0) {
        return Err(Error::Config("spectrogram grid needs at least 2x2 points and a positive cap".into()));
    }
    let rate = spectra.sample_rate_hz;
    let nyquist = rate / 2.0;
    let cap = cap_hz.min(nyquist);
    let lengths: Vec<f64> = spectra.buckets.iter().map(|b| b.length_s).collect();
    let pulse_axis = stats::linspace(lengths[0], lengths[lengths.len() - 1], nl);
    let freq_axis = stats::linspace(0.0, cap, nf);

    // resample each bucket onto the frequency axis, then interpolate across lengths
    let rows: Vec<Vec<f64>> = spectra
        .buckets
        .iter()
        .map(|b| freq_axis.iter().map(|&f| bucket_at(b, rate, f)).collect())
        .collect();
    let mut intensity = vec![vec![0.0; nf]; nl];
    let mut seg = 0;
    for (i, &len) in pulse_axis.iter().enumerate() {
        while seg + 2 < lengths.len() && len > lengths[seg + 1] {
            seg += 1;
        }
        let (l0, l1) = (lengths[seg], lengths[seg + 1]);
        let w = ((len - l0) / (l1 - l0)).clamp(0.0, 1.0);
        for j in 0..nf {
            intensity[i][j] = rows[seg][j] * (1.0 - w) + rows[seg + 1][j] * w;
        }
    }
    let peak = intensity.iter().flatten().copied().fold(0.0, f64::max);
    let mut sg = Spectrogram {
        pulse_length_axis: pulse_axis,
        frequency_axis: freq_axis,
        intensity,
        nyquist_hz: nyquist,
        display_cap_hz: cap,
        peak_amplitude: peak,
    };
    normalize(&mut sg);
    Ok(sg)
}

/// Scales intensities so the maximum is exactly one; all-zero stays zero.
pub fn normalize(sg: &mut Spectrogram) {
    let peak = sg.intensity.iter().flatten().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        for v in sg.intensity.iter_mut().flatten() {
            *v /= peak;
        }
    }
}

/// Uncentered normalized cross-correlation of two intensity grids. Both are
/// non-negative, so the score lies in `[0, 1]`; an all-zero grid scores 0.
pub fn compare_spectrograms(a: &Spectrogram, b: &Spectrogram) -> Result<f64> {
    let same_axis = |x: &[f64], y: &[f64]| {
        x.len() == y.len() && x.iter().zip(y).all(|(u, v)| (u - v).abs() <= 1e-9 * u.abs().max(v.abs()).max(1.0))
    };
    if !same_axis(&a.pulse_length_axis, &b.pulse_length_axis) || !same_axis(&a.frequency_axis, &b.frequency_axis) {
        return Err(Error::GridMismatch);
    }
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (ra, rb) in a.intensity.iter().zip(&b.intensity) {
        for (x, y) in ra.iter().zip(rb) {
            ab += x * y;
            aa += x * x;
            bb += y * y;
        }
    }
    if aa == 0.0 || bb == 0.0 {
        return Ok(0.0);
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(0.0, 1.0))
}

/// Spectrogram of `observable` over every pulse of every dataset, using the
/// pulse segmentation of `power_channel`.
pub fn spectrogram_for(
    datasets: &[&TimeSeriesDataset],
    power_channel: &str,
    observable: &str,
    grid: (usize, usize),
    cap_hz: f64,
) -> Result<Spectrogram> {
    let segments = datasets
        .iter()
        .map(|d| Ok(segment_pulses(d.column(power_channel)?, d.sample_rate_hz)))
        .collect::<Result<Vec<_>>>()?;
    build_spectrogram(&pulse_spectra_multi(datasets, observable, &segments)?, grid, cap_hz)
}
