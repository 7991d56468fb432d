use std::path::{Path, PathBuf};

use dmdc_core::features::VifThresholds;
use dmdc_core::spectral::{DEFAULT_CAP_HZ, DEFAULT_GRID};
use dmdc_core::validation::EvalMode;
use dmdc_core::{Error, ModelConfig, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvSection {
    pub p: usize,
    pub repeats: usize,
    #[serde(default)]
    pub mode: EvalMode,
}

impl Default for CvSection {
    fn default() -> Self {
        Self { p: 3, repeats: 10, mode: EvalMode::Rollout }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImputeDirective {
    pub channel: String,
    pub sentinel: f64,
    pub gate_channel: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrogramSection {
    pub grid: [usize; 2],
    pub cap_hz: f64,
    pub power_channel: String,
    /// Defaults to every observable.
    pub observables: Option<Vec<String>>,
}

impl Default for SpectrogramSection {
    fn default() -> Self {
        Self {
            grid: [DEFAULT_GRID.0, DEFAULT_GRID.1],
            cap_hz: DEFAULT_CAP_HZ,
            power_channel: "laser_power".into(),
            observables: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub x: String,
    pub y: String,
    pub z: String,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self { x: "x".into(), y: "y".into(), z: "z".into() }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_factors() -> Vec<usize> {
    vec![1, 2, 5, 10, 25, 50]
}

fn default_bins() -> usize {
    40
}

/// Everything one pipeline run depends on. Relative paths are resolved
/// against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub schema: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Candidate inputs for feature selection; defaults to every input in the schema.
    #[serde(default)]
    pub inputs: Option<Vec<String>>,
    #[serde(default)]
    pub vif: VifThresholds,
    #[serde(default)]
    pub cv: CvSection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub imputation: Vec<ImputeDirective>,
    #[serde(default = "default_factors")]
    pub decimation_factors: Vec<usize>,
    #[serde(default)]
    pub spectrogram: SpectrogramSection,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
}

impl RunConfig {
    pub fn new(manifest: PathBuf, schema: PathBuf) -> Self {
        Self {
            manifest,
            schema,
            output_dir: default_output_dir(),
            seed: 0,
            inputs: None,
            vif: VifThresholds::default(),
            cv: CvSection::default(),
            model: ModelConfig::default(),
            imputation: Vec::new(),
            decimation_factors: default_factors(),
            spectrogram: SpectrogramSection::default(),
            geometry: GeometrySection::default(),
            histogram_bins: default_bins(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Checks that do not need the data files.
    pub fn validate(&self) -> Result<()> {
        if self.cv.p == 0 || self.cv.repeats == 0 {
            return Err(Error::Config("cv.p and cv.repeats must be positive".into()));
        }
        if self.decimation_factors.contains(&0) {
            return Err(Error::Config("decimation factors must be at least 1".into()));
        }
        if self.spectrogram.grid.iter().any(|n| *n < 2) || !(self.spectrogram.cap_hz > 0.0) {
            return Err(Error::Config("spectrogram grid must be at least 2x2 with a positive cap".into()));
        }
        if self.histogram_bins == 0 {
            return Err(Error::Config("histogram_bins must be positive".into()));
        }
        if !(self.vif.accept_below > 1.0 && self.vif.remove_above >= self.vif.accept_below) {
            return Err(Error::Config("vif thresholds need 1 < accept_below <= remove_above".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Stamped into every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn of(config: &RunConfig) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            seed: config.seed,
        }
    }
}
