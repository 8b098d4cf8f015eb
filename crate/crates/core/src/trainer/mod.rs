//! Deterministic pre-training loop: batch sampling, clean-audio labels,
//! mixing, masking, forward/backward through encoder and quantizer, Adam.
//!
//! Every random draw is keyed by a named seed and the step index, so a run
//! is fixed by its config and corpus, and resuming from a checkpoint
//! replays exactly the steps an uninterrupted run would take.

mod checkpoint;
mod config;
mod data;
mod desk;
mod eval;
mod gradcheck;
mod step;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_BLOB, CHECKPOINT_META};
pub use config::{AdamConfig, Seeds, TrainConfig};
pub use data::{
    corpus_features, mfcc_labels, model_input, prepare_batch, Example, FeatureNorm, ModelInput,
    PreparedBatch, TrainData,
};
pub use desk::{
    desk_run, mfcc_train_data, overlap_utterances, summarize, tap_separability, RunSummary,
    EVAL_BATCHES,
};
pub use eval::{layer_embeddings, masked_accuracy};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use step::{apply_step, grad_norm, loss_and_grad, Adam, QuantMode, TrainState};

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::model::Model;
use crate::rng::rng_from;
use crate::scalar::Scalar;

/// One metrics-log record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub contrastive: f64,
    pub diversity: f64,
    pub speaker: f64,
    pub content: f64,
    pub total: f64,
}

impl StepMetrics {
    pub fn new(step: usize, b: &LossBreakdown) -> Self {
        StepMetrics {
            step,
            contrastive: b.contrastive,
            diversity: b.diversity,
            speaker: b.speaker,
            content: b.content,
            total: b.total,
        }
    }
}

/// Mean total loss over the last 10% of the records (at least one).
pub fn final_mean_total(metrics: &[StepMetrics]) -> Option<f64> {
    if metrics.is_empty() {
        return None;
    }
    let n = (metrics.len() / 10).max(1);
    let tail = &metrics[metrics.len() - n..];
    Some(tail.iter().map(|m| m.total).sum::<f64>() / n as f64)
}

/// Fresh state: model initialized from the model seed, norm fitted on the
/// clean corpus features.
pub fn init_state<S: Scalar>(cfg: &TrainConfig, data: &TrainData<S>) -> Result<TrainState<S>> {
    cfg.validate()?;
    if data.num_classes != cfg.encoder.num_classes {
        return Err(Error::invalid(format!(
            "labels have k={} but encoder.num_classes is {}",
            data.num_classes, cfg.encoder.num_classes
        )));
    }
    let norm = FeatureNorm::fit(&corpus_features(&data.utterances, &cfg.mfcc)?)?;
    let model = Model::new(&cfg.encoder, &cfg.quantizer, &mut rng_from(cfg.seeds.model, &[]))?;
    let adam = Adam::new(&model);
    Ok(TrainState {
        model,
        adam,
        step: 0,
        norm,
        metrics: Vec::new(),
    })
}

/// Runs one step and records its metrics.
pub fn train_step<S: Scalar>(
    state: &mut TrainState<S>,
    cfg: &TrainConfig,
    data: &TrainData<S>,
) -> Result<StepMetrics> {
    let batch = prepare_batch(cfg, data, &state.norm, state.step)?;
    let b = apply_step(state, &batch, cfg).map_err(|e| match e {
        Error::NonFinite(what) => Error::NonFinite(format!("{what} (step {})", state.step)),
        other => other,
    })?;
    let m = StepMetrics::new(state.step, &b);
    state.metrics.push(m);
    state.step += 1;
    Ok(m)
}

/// Where `train` writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs<'a> {
    pub out_dir: Option<&'a Path>,
    /// Stop after this many total steps (for mid-run checkpoints); defaults
    /// to the configured step count.
    pub stop_at: Option<usize>,
}

pub const METRICS_FILE: &str = "metrics.jsonl";

/// Runs from `state.step` up to the configured step count. With an output
/// directory, metrics are appended to `metrics.jsonl`, periodic checkpoints
/// go to `checkpoints/step_<n>` and the final one to `checkpoint`.
pub fn train<S: Scalar>(
    state: &mut TrainState<S>,
    cfg: &TrainConfig,
    data: &TrainData<S>,
    out: &TrainOutputs<'_>,
) -> Result<()> {
    let stop = out.stop_at.unwrap_or(cfg.steps).min(cfg.steps);
    let mut log = match out.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(METRICS_FILE);
            let f = if state.step == 0 {
                File::create(&path)
            } else {
                OpenOptions::new().append(true).create(true).open(&path)
            }
            .map_err(|e| Error::io(&path, e))?;
            Some((BufWriter::new(f), path))
        }
        None => None,
    };
    while state.step < stop {
        let m = train_step(state, cfg, data)?;
        if let Some((w, path)) = log.as_mut() {
            serde_json::to_writer(&mut *w, &m)?;
            w.write_all(b"\n").map_err(|e| Error::io(path.as_path(), e))?;
        }
        if let Some(dir) = out.out_dir {
            if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && state.step < cfg.steps {
                save_checkpoint(&dir.join("checkpoints").join(format!("step_{:06}", state.step)), cfg, state)?;
            }
        }
        if m.step % 50 == 0 {
            log::info!("step {} total {:.4} content {:.4} contrastive {:.4}", m.step, m.total, m.content, m.contrastive);
        }
    }
    if let Some((mut w, path)) = log {
        w.flush().map_err(|e| Error::io(path.as_path(), e))?;
    }
    if let Some(dir) = out.out_dir {
        save_checkpoint(&dir.join("checkpoint"), cfg, state)?;
    }
    Ok(())
}

/// Reads a metrics log written by [`train`].
pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
