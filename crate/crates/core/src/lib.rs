//! Data-driven state-space surrogates for multi-channel process time series.
//!
//! The pipeline ingests experiments, prunes collinear inputs by variance
//! inflation, compares channel distributions with Wasserstein distances,
//! fits `y[t+1] = A y[t] + B u[t]` by dynamic mode decomposition with
//! control, and cross-validates whole experiments to obtain uncertainty
//! envelopes. Pulse-length spectrograms compare the noise structure of
//! measured and simulated responses. A synthetic plant with known operators
//! backs every stage with ground truth.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod dataset;
pub mod distribution;
pub mod dmdc;
pub mod error;
pub mod features;
pub mod gcode;
pub mod linalg;
pub mod model_io;
pub mod plant;
pub mod spectral;
pub mod stats;
pub mod validation;

pub use dataset::{ChannelKind, ChannelSpec, ExperimentManifest, StandardizationParams, TimeSeriesDataset};
pub use dmdc::{DmdcFit, ModelConfig, SnapshotSet, StateSpaceModel};
pub use error::{Error, ErrorKind, Result};
pub use plant::PlantSpec;
pub use spectral::Spectrogram;
pub use validation::{CvConfig, CvReport, UncertaintyEnvelope};
