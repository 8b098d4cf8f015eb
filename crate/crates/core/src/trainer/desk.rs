//! Desk-scale experiment driver shared by the CLI and the acceptance suite:
//! MFCC pseudo-labels, one pre-training run, and the post-run diagnostics
//! (masked accuracy, tap-layer speaker separability on clean and on
//! overlap-mixed utterances).

use serde::{Deserialize, Serialize};

use crate::augment::{mix_batch, MixConfig};
use crate::corpus::{Batch, Utterance};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::probe::speaker_separability;
use crate::pseudolabel::KmeansOptions;
use crate::rng::derive_seed;
use crate::scalar::Scalar;

use super::{
    corpus_features, final_mean_total, init_state, layer_embeddings, masked_accuracy, mfcc_labels,
    model_input, train, FeatureNorm, StepMetrics, TrainConfig, TrainData, TrainOutputs, TrainState,
};

/// Batches used by the masked-accuracy diagnostic.
pub const EVAL_BATCHES: usize = 4;

/// MFCC k-means labels for the clean corpus, with k taken from the encoder
/// config and the clustering seed derived from the data seed.
pub fn mfcc_train_data<S: Scalar>(utterances: Vec<Utterance<S>>, cfg: &TrainConfig) -> Result<TrainData<S>> {
    let feats = corpus_features(&utterances, &cfg.mfcc)?;
    let opts = KmeansOptions {
        k: cfg.encoder.num_classes,
        seed: derive_seed(cfg.seeds.data, &[0xC1]),
        ..KmeansOptions::default()
    };
    let (_, labels) = mfcc_labels(&feats, &opts)?;
    TrainData::new(utterances, labels)
}

/// Every utterance fitted to `length` samples with a chunk of another
/// corpus member overlaid (mixing probability forced to 1, never itself).
/// Speaker tags stay those of the target.
pub fn overlap_utterances<S: Scalar>(
    utterances: &[Utterance<S>],
    length: usize,
    mix: &MixConfig,
    seed: u64,
) -> Result<Vec<Utterance<S>>> {
    if utterances.len() < 2 {
        return Err(Error::invalid("overlap needs at least two utterances"));
    }
    let batch = Batch::new(
        utterances
            .iter()
            .map(|u| Utterance {
                waveform: u.waveform.fit_to_length(length),
                ..u.clone()
            })
            .collect(),
    )?;
    let cfg = MixConfig {
        probability: 1.0,
        exclude_self: true,
        ..mix.clone()
    };
    Ok(mix_batch(&batch, &cfg, seed)?.batch.utterances().to_vec())
}

/// Leave-one-out speaker separability of the tap-layer utterance means.
pub fn tap_separability<S: Scalar>(
    model: &Model<S>,
    cfg: &TrainConfig,
    norm: &FeatureNorm,
    utterances: &[Utterance<S>],
) -> Result<f64> {
    let speakers = utterances
        .iter()
        .map(|u| {
            u.speaker
                .clone()
                .ok_or_else(|| Error::invalid(format!("utterance '{}' has no speaker tag", u.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let inputs = utterances
        .iter()
        .map(|u| model_input(&u.id, &u.waveform, cfg, norm))
        .collect::<Result<Vec<_>>>()?;
    let emb = layer_embeddings(&model.encoder, &inputs)?;
    speaker_separability(&emb[cfg.encoder.tap_layer], &speakers)
}

/// Outcome of one desk run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub speaker_loss: bool,
    pub mix_probability: f64,
    pub steps: usize,
    /// Mean total loss over the first ten steps.
    pub early_total: f64,
    /// Mean total loss over the last 10% of steps.
    pub final_total: f64,
    pub masked_accuracy: f64,
    pub tap_separability: f64,
    pub overlap_separability: f64,
}

/// Diagnostics for a trained state. `eval_seed` fixes the evaluation
/// batches and the overlap mixing.
pub fn summarize<S: Scalar>(
    state: &TrainState<S>,
    cfg: &TrainConfig,
    data: &TrainData<S>,
    eval_seed: u64,
) -> Result<RunSummary> {
    let m: &[StepMetrics] = &state.metrics;
    let head = &m[..m.len().min(10)];
    let early_total = if head.is_empty() {
        f64::NAN
    } else {
        head.iter().map(|r| r.total).sum::<f64>() / head.len() as f64
    };
    let overlapped = overlap_utterances(
        &data.utterances,
        cfg.utterance_length,
        &cfg.mix,
        derive_seed(eval_seed, &[0x0F]),
    )?;
    Ok(RunSummary {
        speaker_loss: cfg.speaker_loss,
        mix_probability: cfg.mix.probability,
        steps: state.step,
        early_total,
        final_total: final_mean_total(m).unwrap_or(f64::NAN),
        masked_accuracy: masked_accuracy(&state.model, cfg, data, &state.norm, EVAL_BATCHES, eval_seed)?,
        tap_separability: tap_separability(&state.model, cfg, &state.norm, &data.utterances)?,
        overlap_separability: tap_separability(&state.model, cfg, &state.norm, &overlapped)?,
    })
}

/// Fresh state, full training run, then [`summarize`].
pub fn desk_run<S: Scalar>(
    cfg: &TrainConfig,
    data: &TrainData<S>,
    out: &TrainOutputs<'_>,
    eval_seed: u64,
) -> Result<(TrainState<S>, RunSummary)> {
    let mut state = init_state(cfg, data)?;
    train(&mut state, cfg, data, out)?;
    let summary = summarize(&state, cfg, data, eval_seed)?;
    Ok((state, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth_corpus;

    #[test]
    fn overlap_keeps_tags_and_changes_audio() {
        let utts = synth_corpus::<f64>(2, 2, 0.05, 16_000, 3).unwrap();
        let mixed = overlap_utterances(&utts, 800, &MixConfig::default(), 1).unwrap();
        assert_eq!(mixed.len(), 4);
        for (a, b) in utts.iter().zip(&mixed) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.speaker, b.speaker);
            assert_eq!(b.waveform.len(), 800);
            assert_ne!(a.waveform.samples(), b.waveform.samples());
        }
        assert!(overlap_utterances(&utts[..1], 800, &MixConfig::default(), 1).is_err());
    }
}
