//! Experiment time series: ingestion, standardization, imputation and
//! resampling.
//!
//! A [`TimeSeriesDataset`] stores one experiment as a dense matrix with one
//! row per uniformly spaced sample and one column per channel. Channels are
//! tagged as process inputs or observables.

use std::collections::HashSet;
use std::io::Read;
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Name of the optional leading time column in CSV files.
pub const TIME_COLUMN: &str = "time_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Input,
    Observable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    #[serde(default)]
    pub unit: String,
    pub kind: ChannelKind,
}

impl ChannelSpec {
    pub fn input(name: &str, unit: &str) -> Self {
        Self { name: name.into(), unit: unit.into(), kind: ChannelKind::Input }
    }

    pub fn observable(name: &str, unit: &str) -> Self {
        Self { name: name.into(), unit: unit.into(), kind: ChannelKind::Observable }
    }
}

/// Reads a channel schema (JSON array of [`ChannelSpec`]).
pub fn load_schema(path: &Path) -> Result<Vec<ChannelSpec>> {
    let text = std::fs::read_to_string(path)?;
    let schema: Vec<ChannelSpec> = serde_json::from_str(&text)?;
    check_unique(schema.iter().map(|c| c.name.as_str()))?;
    Ok(schema)
}

fn check_unique<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(Error::DuplicateChannel(n.to_string()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub experiment_id: String,
    pub sample_rate_hz: f64,
    channels: Vec<ChannelSpec>,
    /// rows = samples, columns = channels
    data: DMatrix<f64>,
}

impl TimeSeriesDataset {
    pub fn new(
        experiment_id: impl Into<String>,
        sample_rate_hz: f64,
        channels: Vec<ChannelSpec>,
        data: DMatrix<f64>,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::Config(format!("sample rate {sample_rate_hz} must be positive")));
        }
        if data.ncols() != channels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} columns for {} channels",
                data.ncols(),
                channels.len()
            )));
        }
        check_unique(channels.iter().map(|c| c.name.as_str()))?;
        for (j, c) in channels.iter().enumerate() {
            if let Some(row) = data.column(j).iter().position(|v| v.is_nan()) {
                return Err(Error::NaNInRetainedColumn { name: c.name.clone(), row });
            }
        }
        Ok(Self { experiment_id: experiment_id.into(), sample_rate_hz, channels, data })
    }

    /// Builds a dataset from named columns of equal length.
    pub fn from_columns(
        experiment_id: impl Into<String>,
        sample_rate_hz: f64,
        columns: Vec<(ChannelSpec, Vec<f64>)>,
    ) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.1.len());
        if let Some((c, _)) = columns.iter().find(|c| c.1.len() != rows) {
            return Err(Error::DimensionMismatch(format!("column `{}` length differs", c.name)));
        }
        let mut flat = Vec::with_capacity(rows * columns.len());
        let mut specs = Vec::with_capacity(columns.len());
        for (spec, values) in columns {
            flat.extend(values);
            specs.push(spec);
        }
        let data = DMatrix::from_vec(rows, specs.len(), flat);
        Self::new(experiment_id, sample_rate_hz, specs, data)
    }

    pub fn row_count(&self) -> usize {
        self.data.nrows()
    }

    pub fn channels(&self) -> &[ChannelSpec] {
        &self.channels
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.name.clone()).collect()
    }

    pub fn names_of_kind(&self, kind: ChannelKind) -> Vec<String> {
        self.channels.iter().filter(|c| c.kind == kind).map(|c| c.name.clone()).collect()
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }

    pub fn has_channel(&self, name: &str) -> bool {
        self.channels.iter().any(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        let j = self.channel_index(name)?;
        let n = self.row_count();
        Ok(&self.data.as_slice()[j * n..(j + 1) * n])
    }

    /// Columns `names` as a samples x names matrix.
    pub fn matrix_of<S: AsRef<str>>(&self, names: &[S]) -> Result<DMatrix<f64>> {
        let idx = names
            .iter()
            .map(|n| self.channel_index(n.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(self.row_count(), idx.len(), |i, k| self.data[(i, idx[k])]))
    }

    /// Dataset restricted to `names`, in that order.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        let specs = names
            .iter()
            .map(|n| self.channel_index(n.as_ref()).map(|j| self.channels[j].clone()))
            .collect::<Result<Vec<_>>>()?;
        let data = self.matrix_of(names)?;
        Self::new(self.experiment_id.clone(), self.sample_rate_hz, specs, data)
    }

    /// Copy with one column replaced.
    pub fn with_column(&self, name: &str, values: Vec<f64>) -> Result<Self> {
        let j = self.channel_index(name)?;
        if values.len() != self.row_count() {
            return Err(Error::DimensionMismatch(format!("column `{name}` length differs")));
        }
        let mut data = self.data.clone();
        data.column_mut(j).copy_from_slice(&values);
        Self::new(self.experiment_id.clone(), self.sample_rate_hz, self.channels.clone(), data)
    }

    /// Appends channels at the end.
    pub fn with_appended(&self, extra: Vec<(ChannelSpec, Vec<f64>)>) -> Result<Self> {
        let mut columns: Vec<(ChannelSpec, Vec<f64>)> = self
            .channels
            .iter()
            .enumerate()
            .map(|(j, c)| (c.clone(), self.data.column(j).iter().copied().collect()))
            .collect();
        columns.extend(extra);
        Self::from_columns(self.experiment_id.clone(), self.sample_rate_hz, columns)
    }

    /// Writes the dataset as a headered CSV with a leading time column.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![TIME_COLUMN.to_string()];
        header.extend(self.channel_names());
        w.write_record(&header)?;
        let dt = 1.0 / self.sample_rate_hz;
        for i in 0..self.row_count() {
            let mut rec = Vec::with_capacity(header.len());
            rec.push(format!("{}", i as f64 * dt));
            rec.extend(self.data.row(i).iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Names of channels whose values never change (zero-variance filter).
pub fn constant_channels(ds: &TimeSeriesDataset) -> Vec<String> {
    ds.channels
        .iter()
        .enumerate()
        .filter(|(j, _)| {
            let col = ds.data.column(*j);
            col.iter().all(|v| *v == col[0])
        })
        .map(|(_, c)| c.name.clone())
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub experiment_id: String,
    pub rows: usize,
    /// Schema columns dropped because every value was missing.
    pub excluded_columns: Vec<String>,
}

fn parse_cell(cell: &str, row: usize) -> Result<f64> {
    let t = cell.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("na") {
        return Ok(f64::NAN);
    }
    t.parse::<f64>()
        .map_err(|_| Error::MalformedNumber { line: row + 2, token: t.to_string() })
}

/// Ingests a headered CSV file. The experiment id is the file stem.
pub fn ingest_csv(
    path: &Path,
    schema: &[ChannelSpec],
    sample_rate_hz: f64,
) -> Result<(TimeSeriesDataset, IngestReport)> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "experiment".into());
    let file = std::fs::File::open(path)?;
    ingest_reader(file, &id, schema, sample_rate_hz)
}

pub fn ingest_reader<R: Read>(
    reader: R,
    experiment_id: &str,
    schema: &[ChannelSpec],
    sample_rate_hz: f64,
) -> Result<(TimeSeriesDataset, IngestReport)> {
    check_unique(schema.iter().map(|c| c.name.as_str()))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let positions = schema
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| *h == c.name)
                .ok_or_else(|| Error::MissingColumn(c.name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let time_pos = header.iter().position(|h| h == TIME_COLUMN);

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); schema.len()];
    let mut times = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (k, &p) in positions.iter().enumerate() {
            columns[k].push(parse_cell(rec.get(p).unwrap_or(""), row)?);
        }
        if let Some(tp) = time_pos {
            times.push(parse_cell(rec.get(tp).unwrap_or(""), row)?);
        }
    }

    let expected = 1.0 / sample_rate_hz;
    for (i, w) in times.windows(2).enumerate() {
        let spacing = w[1] - w[0];
        if !((spacing - expected).abs() <= 0.01 * expected) {
            return Err(Error::NonUniformTimestamps { row: i + 1, spacing, expected });
        }
    }

    let rows = columns.first().map_or(0, Vec::len);
    let mut report = IngestReport { experiment_id: experiment_id.to_string(), rows, ..Default::default() };
    let mut kept = Vec::new();
    for (spec, values) in schema.iter().zip(columns) {
        if rows > 0 && values.iter().all(|v| v.is_nan()) {
            warn!("{experiment_id}: excluding all-missing column `{}`", spec.name);
            report.excluded_columns.push(spec.name.clone());
            continue;
        }
        if let Some(row) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::NaNInRetainedColumn { name: spec.name.clone(), row });
        }
        kept.push((spec.clone(), values));
    }
    let ds = if kept.is_empty() {
        TimeSeriesDataset::new(experiment_id, sample_rate_hz, Vec::new(), DMatrix::zeros(rows, 0))?
    } else {
        TimeSeriesDataset::from_columns(experiment_id, sample_rate_hz, kept)?
    };
    Ok((ds, report))
}

/// Per-channel affine standardization `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub channels: Vec<String>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl StandardizationParams {
    /// Pass-through parameters (mean 0, scale 1).
    pub fn identity(channels: &[String]) -> Self {
        Self {
            channels: channels.to_vec(),
            mean: vec![0.0; channels.len()],
            scale: vec![1.0; channels.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn forward(&self, k: usize, x: f64) -> f64 {
        (x - self.mean[k]) / self.scale[k]
    }

    pub fn inverse(&self, k: usize, z: f64) -> f64 {
        z * self.scale[k] + self.mean[k]
    }

    fn transform(&self, ds: &TimeSeriesDataset, f: impl Fn(&Self, usize, f64) -> f64) -> Result<TimeSeriesDataset> {
        let mut data = ds.data.clone();
        for (k, name) in self.channels.iter().enumerate() {
            let j = ds.channel_index(name)?;
            for v in data.column_mut(j).iter_mut() {
                *v = f(self, k, *v);
            }
        }
        TimeSeriesDataset::new(ds.experiment_id.clone(), ds.sample_rate_hz, ds.channels.clone(), data)
    }
}

/// Fits mean and population standard deviation on one dataset.
pub fn fit_standardizer<S: AsRef<str>>(
    ds: &TimeSeriesDataset,
    channel_subset: &[S],
) -> Result<StandardizationParams> {
    fit_standardizer_pooled(&[ds], channel_subset)
}

/// Fits on the row-wise concatenation of several datasets.
pub fn fit_standardizer_pooled<S: AsRef<str>>(
    datasets: &[&TimeSeriesDataset],
    channel_subset: &[S],
) -> Result<StandardizationParams> {
    if channel_subset.is_empty() {
        return Err(Error::Config("standardizer needs at least one channel".into()));
    }
    let mut params = StandardizationParams {
        channels: Vec::with_capacity(channel_subset.len()),
        mean: Vec::with_capacity(channel_subset.len()),
        scale: Vec::with_capacity(channel_subset.len()),
    };
    for name in channel_subset {
        let name = name.as_ref();
        let mut pooled = Vec::new();
        for ds in datasets {
            pooled.extend_from_slice(ds.column(name)?);
        }
        let mean = stats::mean(&pooled);
        let sd = stats::population_sd(&pooled);
        let scale = if sd > 0.0 && sd.is_finite() {
            sd
        } else {
            warn!("channel `{name}` is constant; using unit scale");
            1.0
        };
        params.channels.push(name.to_string());
        params.mean.push(mean);
        params.scale.push(scale);
    }
    Ok(params)
}

pub fn apply_standardizer(ds: &TimeSeriesDataset, params: &StandardizationParams) -> Result<TimeSeriesDataset> {
    params.transform(ds, StandardizationParams::forward)
}

pub fn invert_standardizer(ds: &TimeSeriesDataset, params: &StandardizationParams) -> Result<TimeSeriesDataset> {
    params.transform(ds, StandardizationParams::inverse)
}

/// Linear interpolation over runs of `sentinel` where `gate > 0`.
///
/// Each gated run is bridged between the nearest non-sentinel values on
/// either side; a run touching the series boundary is held at its single
/// anchor. Ungated sentinels are left alone.
pub fn impute_series(values: &[f64], gate: &[f64], sentinel: f64) -> Option<Vec<f64>> {
    let n = values.len();
    let mut out = values.to_vec();
    let is_valid = |i: usize| values[i] != sentinel;
    let mut i = 0;
    while i < n {
        if is_valid(i) || gate[i] <= 0.0 {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && !is_valid(i) && gate[i] > 0.0 {
            i += 1;
        }
        let end = i; // exclusive
        let left = (0..start).rev().find(|&k| is_valid(k));
        let right = (end..n).find(|&k| is_valid(k));
        match (left, right) {
            (Some(l), Some(r)) => {
                let (vl, vr) = (values[l], values[r]);
                let span = (r - l) as f64;
                for (k, slot) in out.iter_mut().enumerate().take(end).skip(start) {
                    let w = (k - l) as f64 / span;
                    *slot = vl + w * (vr - vl);
                }
            }
            (Some(a), None) | (None, Some(a)) => {
                out[start..end].iter_mut().for_each(|v| *v = values[a]);
            }
            (None, None) => return None,
        }
    }
    Some(out)
}

pub fn impute_off_state(
    ds: &TimeSeriesDataset,
    channel: &str,
    sentinel: f64,
    gate_channel: &str,
) -> Result<TimeSeriesDataset> {
    let values = ds.column(channel)?;
    let gate = ds.column(gate_channel)?;
    let imputed = impute_series(values, gate, sentinel).ok_or_else(|| Error::AllSentinel(channel.to_string()))?;
    ds.with_column(channel, imputed)
}

/// Keeps every `factor`-th row starting at row 0. Panics if `factor == 0`.
pub fn decimate(ds: &TimeSeriesDataset, factor: usize) -> TimeSeriesDataset {
    assert!(factor >= 1, "decimation factor must be at least 1");
    let rows: Vec<usize> = (0..ds.row_count()).step_by(factor).collect();
    let data = DMatrix::from_fn(rows.len(), ds.channels.len(), |i, j| ds.data[(rows[i], j)]);
    TimeSeriesDataset {
        experiment_id: ds.experiment_id.clone(),
        sample_rate_hz: ds.sample_rate_hz / factor as f64,
        channels: ds.channels.clone(),
        data,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub experiment_id: String,
    pub path: PathBuf,
    pub sample_rate_hz: f64,
}

/// List of experiment files, paths relative to the manifest's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut m: ExperimentManifest = serde_json::from_str(&text)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.experiment_id.as_str()) {
                return Err(Error::Config(format!("duplicate experiment id `{}`", e.experiment_id)));
            }
            let p = self.resolve(e);
            if !p.is_file() {
                return Err(Error::Config(format!("manifest file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    /// Ingests every entry; datasets take their manifest id.
    pub fn load_datasets(&self, schema: &[ChannelSpec]) -> Result<Vec<(TimeSeriesDataset, IngestReport)>> {
        self.entries
            .iter()
            .map(|e| {
                let file = std::fs::File::open(self.resolve(e))?;
                ingest_reader(file, &e.experiment_id, schema, e.sample_rate_hz)
            })
            .collect()
    }
}
