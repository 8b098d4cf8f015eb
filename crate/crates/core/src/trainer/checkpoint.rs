use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Params;
use crate::rng::rng_from;
use crate::scalar::Scalar;

use super::{Adam, FeatureNorm, StepMetrics, TrainConfig, TrainState};

pub const CHECKPOINT_META: &str = "checkpoint.json";
pub const CHECKPOINT_BLOB: &str = "params.f64";
const FORMAT: &str = "satpt-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    /// Offset in f64 values from the start of the blob.
    offset: usize,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    format: String,
    config: TrainConfig,
    step: usize,
    adam_t: usize,
    manifest: Vec<TensorEntry>,
    metrics: Vec<StepMetrics>,
}

fn push<S: Scalar>(
    blob: &mut Vec<u8>,
    manifest: &mut Vec<TensorEntry>,
    offset: &mut usize,
    name: String,
    shape: Vec<usize>,
    data: impl ExactSizeIterator<Item = S>,
) {
    let n = data.len();
    manifest.push(TensorEntry {
        name,
        offset: *offset,
        shape,
    });
    for v in data {
        blob.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    *offset += n;
}

/// Writes `checkpoint.json` and `params.f64` into `dir`.
pub fn save_checkpoint<S: Scalar>(dir: &Path, cfg: &TrainConfig, state: &TrainState<S>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::new();
    let mut manifest = Vec::new();
    let mut offset = 0;
    for (prefix, model) in [("model", &state.model), ("adam.m", &state.adam.m), ("adam.v", &state.adam.v)] {
        for (name, shape, data) in model.params() {
            push(&mut blob, &mut manifest, &mut offset, format!("{prefix}.{name}"), shape, data.iter().copied());
        }
    }
    let d = state.norm.dim();
    push(&mut blob, &mut manifest, &mut offset, "norm.mean".into(), vec![d], state.norm.mean.iter().copied());
    push(&mut blob, &mut manifest, &mut offset, "norm.std".into(), vec![d], state.norm.std.iter().copied());
    let meta = Meta {
        format: FORMAT.into(),
        config: cfg.clone(),
        step: state.step,
        adam_t: state.adam.t,
        manifest,
        metrics: state.metrics.clone(),
    };
    let blob_path = dir.join(CHECKPOINT_BLOB);
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
    let meta_path = dir.join(CHECKPOINT_META);
    fs::write(&meta_path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))
}

struct Reader<'a> {
    values: Vec<f64>,
    manifest: std::collections::HashMap<&'a str, &'a TensorEntry>,
}

impl Reader<'_> {
    fn take(&self, name: &str, len: usize) -> Result<&[f64]> {
        let e = self
            .manifest
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("tensor '{name}' missing from manifest")))?;
        let n: usize = e.shape.iter().product();
        if n != len {
            return Err(Error::Checkpoint(format!(
                "tensor '{name}' has {n} values, model expects {len}"
            )));
        }
        self.values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::Checkpoint(format!("tensor '{name}' runs past the blob")))
    }

    fn fill<S: Scalar>(&self, prefix: &str, model: &mut Model<S>) -> Result<()> {
        for (name, data) in model.params_mut() {
            let src = self.take(&format!("{prefix}.{name}"), data.len())?;
            for (d, &s) in data.iter_mut().zip(src) {
                *d = S::of(s);
            }
        }
        Ok(())
    }
}

/// Reads a checkpoint directory back into a config and training state.
pub fn load_checkpoint<S: Scalar>(dir: &Path) -> Result<(TrainConfig, TrainState<S>)> {
    let meta_path = dir.join(CHECKPOINT_META);
    let text = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_slice(&text)?;
    if meta.format != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format '{}'", meta.format)));
    }
    let blob_path = dir.join(CHECKPOINT_BLOB);
    let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint("parameter blob length is not a multiple of 8".into()));
    }
    let reader = Reader {
        values: bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
        manifest: meta.manifest.iter().map(|e| (e.name.as_str(), e)).collect(),
    };
    let cfg = meta.config;
    let mut model = Model::<S>::new(&cfg.encoder, &cfg.quantizer, &mut rng_from(0, &[]))?;
    reader.fill("model", &mut model)?;
    let mut adam = Adam::new(&model);
    reader.fill("adam.m", &mut adam.m)?;
    reader.fill("adam.v", &mut adam.v)?;
    adam.t = meta.adam_t;
    let d = reader
        .manifest
        .get("norm.mean")
        .map(|e| e.shape.iter().product())
        .unwrap_or(0);
    let norm = FeatureNorm {
        mean: reader.take("norm.mean", d)?.to_vec(),
        std: reader.take("norm.std", d)?.to_vec(),
    };
    Ok((
        cfg,
        TrainState {
            model,
            adam,
            step: meta.step,
            norm,
            metrics: meta.metrics,
        },
    ))
}
