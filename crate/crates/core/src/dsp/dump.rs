//! Feature dumps: row-major little-endian f32 blob plus a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::FeatureSequence;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase")]
pub struct FeatureSidecar {
    #[serde(rename = "id")]
    pub id: String,
    pub t: usize,
    pub d: usize,
    #[serde(rename = "frame_rate")]
    pub frame_rate: f64,
}

fn paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{id}.f32")), dir.join(format!("{id}.json")))
}

pub fn write_features<S: Scalar>(dir: &Path, features: &FeatureSequence<S>) -> Result<()> {
    let (blob, side) = paths(dir, &features.id);
    let mut bytes = Vec::with_capacity(features.frames.len() * 4);
    for &v in features.frames.iter() {
        bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))?;
    let meta = FeatureSidecar {
        id: features.id.clone(),
        t: features.len(),
        d: features.dim(),
        frame_rate: features.frame_rate,
    };
    fs::write(&side, serde_json::to_vec(&meta)?).map_err(|e| Error::io(&side, e))
}

pub fn read_features<S: Scalar>(dir: &Path, id: &str) -> Result<FeatureSequence<S>> {
    let (blob, side) = paths(dir, id);
    let meta: FeatureSidecar =
        serde_json::from_slice(&fs::read(&side).map_err(|e| Error::io(&side, e))?)?;
    let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    if bytes.len() != meta.t * meta.d * 4 {
        return Err(Error::DimensionMismatch {
            what: "feature blob bytes",
            expected: meta.t * meta.d * 4,
            got: bytes.len(),
        });
    }
    let vals: Vec<S> = bytes
        .chunks_exact(4)
        .map(|c| S::of(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
        .collect();
    let frames = Array2::from_shape_vec((meta.t, meta.d), vals).expect("sized above");
    FeatureSequence::new(meta.id, frames, meta.frame_rate)
}
