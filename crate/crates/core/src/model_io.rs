//! Versioned JSON model files.
//!
//! ```json
//! {
//!   "format": "dmdc-state-space",
//!   "version": 1,
//!   "sample_rate_hz": 100.0,
//!   "svd_rank_used": 24,
//!   "observable_names": ["..."],
//!   "input_names": ["..."],
//!   "input_standardizer": {"channels": [...], "mean": [...], "scale": [...]},
//!   "observable_standardizer": {...},
//!   "a": {"rows": q, "cols": q, "data": [row-major values]},
//!   "b": {"rows": q, "cols": p, "data": [row-major values]},
//!   "offset": [q values]
//! }
//! ```
//!
//! A missing `offset` reads as zeros. Floats are written in shortest round-trip form, so a save/load cycle is
//! bit-exact.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::StandardizationParams;
use crate::dmdc::StateSpaceModel;
use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "dmdc-state-space";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixJson {
    fn from(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

impl TryFrom<&MatrixJson> for DMatrix<f64> {
    type Error = Error;

    fn try_from(m: &MatrixJson) -> Result<Self> {
        if m.data.len() != m.rows * m.cols {
            return Err(Error::CorruptFile(format!(
                "matrix declares {}x{} but holds {} values",
                m.rows,
                m.cols,
                m.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(m.rows, m.cols, &m.data))
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    sample_rate_hz: f64,
    svd_rank_used: usize,
    observable_names: Vec<String>,
    input_names: Vec<String>,
    input_standardizer: StandardizationParams,
    observable_standardizer: StandardizationParams,
    a: MatrixJson,
    b: MatrixJson,
    #[serde(default)]
    offset: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

pub fn to_json(model: &StateSpaceModel) -> Result<String> {
    let env = Envelope {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        sample_rate_hz: model.sample_rate_hz,
        svd_rank_used: model.svd_rank_used,
        observable_names: model.observable_names.clone(),
        input_names: model.input_names.clone(),
        input_standardizer: model.input_standardizer.clone(),
        observable_standardizer: model.observable_standardizer.clone(),
        a: (&model.a).into(),
        b: (&model.b).into(),
        offset: Some(model.offset.as_slice().to_vec()),
    };
    Ok(serde_json::to_string_pretty(&env)? + "\n")
}

pub fn from_json(text: &str) -> Result<StateSpaceModel> {
    let header: Header = serde_json::from_str(text).map_err(|e| Error::CorruptFile(e.to_string()))?;
    if header.format != FORMAT_TAG {
        return Err(Error::CorruptFile(format!("unknown format `{}`", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: header.version, expected: FORMAT_VERSION });
    }
    let env: Envelope = serde_json::from_str(text).map_err(|e| Error::CorruptFile(e.to_string()))?;
    let a = DMatrix::try_from(&env.a)?;
    let b = DMatrix::try_from(&env.b)?;
    let q = env.observable_names.len();
    let p = env.input_names.len();
    let offset = env.offset.map_or_else(|| DVector::zeros(q), DVector::from_vec);
    if a.shape() != (q, q)
        || offset.len() != q
        || b.shape() != (q, p)
        || env.input_standardizer.len() != p
        || env.observable_standardizer.len() != q
    {
        return Err(Error::CorruptFile("operator shapes disagree with channel lists".into()));
    }
    Ok(StateSpaceModel {
        a,
        b,
        offset,
        observable_names: env.observable_names,
        input_names: env.input_names,
        input_standardizer: env.input_standardizer,
        observable_standardizer: env.observable_standardizer,
        sample_rate_hz: env.sample_rate_hz,
        svd_rank_used: env.svd_rank_used,
    })
}

pub fn save_model(model: &StateSpaceModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<StateSpaceModel> {
    from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_model(seed: u64) -> StateSpaceModel {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut r = || rng.random::<f64>() * 2.0 - 1.0;
        let obs = vec!["mps".to_string(), "mpt".to_string()];
        let inp = vec!["power".to_string(), "feed".to_string(), "z".to_string()];
        StateSpaceModel {
            a: DMatrix::from_fn(2, 2, |_, _| r()),
            b: DMatrix::from_fn(2, 3, |_, _| r()),
            offset: DVector::from_fn(2, |_, _| r()),
            input_standardizer: StandardizationParams {
                channels: inp.clone(),
                mean: vec![r(), r(), r()],
                scale: vec![1.0 + r().abs(), 0.1, 3.0],
            },
            observable_standardizer: StandardizationParams {
                channels: obs.clone(),
                mean: vec![r(), r() * 1e3],
                scale: vec![1.0 / 3.0, 7.0],
            },
            observable_names: obs,
            input_names: inp,
            sample_rate_hz: 100.0,
            svd_rank_used: 5,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        for seed in 0..5 {
            let m = random_model(seed);
            save_model(&m, &path).unwrap();
            let back = load_model(&path).unwrap();
            assert_eq!(back, m);
            for (x, y) in back.a.iter().zip(m.a.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn unknown_version_is_rejected() {
        let text = to_json(&random_model(1)).unwrap().replace("\"version\": 1", "\"version\": 7");
        assert!(matches!(from_json(&text), Err(Error::VersionMismatch { found: 7, .. })));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let text = to_json(&random_model(2)).unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(from_json(cut), Err(Error::CorruptFile(_))));
    }
}
