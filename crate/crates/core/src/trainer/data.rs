use std::collections::HashMap;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::augment::{mix_batch, MixSpec};
use crate::corpus::{crop_offset, make_batch, Utterance, Waveform};
use crate::dsp::{frame_count, mfcc, FeatureSequence, MfccConfig, Provenance};
use crate::encoder::{sample_mask_nonempty, EncoderInput, FrontEnd, MaskSet};
use crate::error::{Error, Result};
use crate::pseudolabel::{
    assign, fit, pool_frames, KmeansModel, KmeansOptions, LabelSource, PseudoLabelSequence,
};
use crate::rng::derive_seed;
use crate::scalar::Scalar;

use super::TrainConfig;

/// Per-dimension standardization fitted on clean corpus features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    pub fn identity(dim: usize) -> Self {
        FeatureNorm {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit<S: Scalar>(features: &[FeatureSequence<S>]) -> Result<Self> {
        let pooled = pool_frames(features)?.mapv(|v| v.as_f64());
        let mean = pooled.mean_axis(Axis(0)).expect("non-empty");
        let std = pooled.std_axis(Axis(0), 0.0);
        Ok(FeatureNorm {
            mean: mean.to_vec(),
            std: std.iter().map(|&s| if s > 1e-8 { s } else { 1.0 }).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply<S: Scalar>(&self, frames: &Array2<S>) -> Result<Array2<S>> {
        if frames.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "feature norm dim",
                expected: self.dim(),
                got: frames.ncols(),
            });
        }
        let mean = Array1::from_iter(self.mean.iter().map(|&m| S::of(m)));
        let inv = Array1::from_iter(self.std.iter().map(|&s| S::of(1.0 / s)));
        Ok((frames - &mean) * &inv)
    }
}

/// MFCC features of every clean utterance, in corpus order.
pub fn corpus_features<S: Scalar>(
    utterances: &[Utterance<S>],
    cfg: &MfccConfig,
) -> Result<Vec<FeatureSequence<S>>> {
    utterances
        .iter()
        .map(|u| mfcc(&u.id, &u.waveform, cfg))
        .collect()
}

/// First-iteration pseudo-labels: k-means over clean MFCC frames.
pub fn mfcc_labels<S: Scalar>(
    features: &[FeatureSequence<S>],
    opts: &KmeansOptions,
) -> Result<(KmeansModel<S>, Vec<PseudoLabelSequence>)> {
    let model = fit(&pool_frames(features)?, opts)?;
    let labels = features
        .iter()
        .map(|f| assign(&model, f, LabelSource::Mfcc))
        .collect::<Result<Vec<_>>>()?;
    Ok((model, labels))
}

/// Corpus plus clean-audio pseudo-labels, keyed by utterance id.
#[derive(Debug, Clone)]
pub struct TrainData<S> {
    pub utterances: Vec<Utterance<S>>,
    labels: HashMap<String, PseudoLabelSequence>,
    pub num_classes: usize,
}

impl<S: Scalar> TrainData<S> {
    pub fn new(utterances: Vec<Utterance<S>>, labels: Vec<PseudoLabelSequence>) -> Result<Self> {
        let k = labels.first().map(|l| l.k).unwrap_or(0);
        let mut map = HashMap::with_capacity(labels.len());
        for l in labels {
            if l.provenance != Provenance::Clean {
                return Err(Error::invalid(format!(
                    "labels for '{}' were not computed from clean audio",
                    l.id
                )));
            }
            if l.k != k {
                return Err(Error::invalid("label sequences disagree on k"));
            }
            map.insert(l.id.clone(), l);
        }
        if let Some(u) = utterances.iter().find(|u| !map.contains_key(&u.id)) {
            return Err(Error::invalid(format!("no labels for utterance '{}'", u.id)));
        }
        Ok(TrainData {
            utterances,
            labels: map,
            num_classes: k,
        })
    }

    pub fn labels(&self, id: &str) -> Option<&PseudoLabelSequence> {
        self.labels.get(id)
    }

    /// Labels for the `length`-sample crop of utterance `id` that
    /// `fit_to_length` produces. Frames of the zero-padded tail repeat the
    /// last label.
    pub fn window_labels(&self, utt: &Utterance<S>, length: usize, mfcc: &MfccConfig) -> Result<Vec<usize>> {
        let seq = self
            .labels(&utt.id)
            .ok_or_else(|| Error::invalid(format!("no labels for utterance '{}'", utt.id)))?;
        let n = utt.waveform.len();
        let full = frame_count(n, mfcc.window, mfcc.hop);
        if seq.len().abs_diff(full) > crate::dsp::ALIGN_TOLERANCE {
            return Err(Error::DimensionMismatch {
                what: "label frames vs utterance frames",
                expected: full,
                got: seq.len(),
            });
        }
        let t = frame_count(length, mfcc.window, mfcc.hop);
        let start = (crop_offset(n, length) as f64 / mfcc.hop as f64).round() as usize;
        let mut w = seq.window(start, t).labels;
        let last = *w.last().or(seq.labels.last()).ok_or_else(|| {
            Error::invalid(format!("utterance '{}' has no labelled frames", utt.id))
        })?;
        w.resize(t, last);
        Ok(w)
    }
}

/// What one utterance feeds the encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput<S> {
    Features(Array2<S>),
    Samples(Vec<S>),
}

impl<S: Scalar> ModelInput<S> {
    pub fn as_input(&self) -> EncoderInput<'_, S> {
        match self {
            ModelInput::Features(f) => EncoderInput::Features(f),
            ModelInput::Samples(s) => EncoderInput::Samples(s),
        }
    }
}

/// Encoder input for a waveform: normalized MFCCs, or raw samples for the
/// conv front end.
pub fn model_input<S: Scalar>(
    id: &str,
    wave: &Waveform<S>,
    cfg: &TrainConfig,
    norm: &FeatureNorm,
) -> Result<ModelInput<S>> {
    match cfg.encoder.front_end {
        FrontEnd::Precomputed => {
            let f = mfcc(id, wave, &cfg.mfcc)?;
            Ok(ModelInput::Features(norm.apply(&f.frames)?))
        }
        FrontEnd::Conv => Ok(ModelInput::Samples(wave.samples().to_vec())),
    }
}

#[derive(Debug, Clone)]
pub struct Example<S> {
    pub id: String,
    pub speaker: Option<String>,
    pub input: ModelInput<S>,
    pub labels: Vec<usize>,
    pub label_provenance: Provenance,
    pub mask: MaskSet,
}

/// Everything one optimizer step consumes, fully determined by the step.
#[derive(Debug, Clone)]
pub struct PreparedBatch<S> {
    pub step: usize,
    pub examples: Vec<Example<S>>,
    pub specs: Vec<MixSpec>,
    pub tau: f64,
    pub gumbel_seed: u64,
    pub negative_seed: u64,
}

/// Sample batch → clean labels → mix → features on mixed audio → masks.
pub fn prepare_batch<S: Scalar>(
    cfg: &TrainConfig,
    data: &TrainData<S>,
    norm: &FeatureNorm,
    step: usize,
) -> Result<PreparedBatch<S>> {
    let s = &cfg.seeds;
    let step64 = step as u64;
    let batch = make_batch(
        &data.utterances,
        cfg.batch_size,
        cfg.utterance_length,
        derive_seed(s.data, &[step64]),
    )?;
    // labels come from the clean source utterances, before any mixing
    let by_id: HashMap<&str, &Utterance<S>> =
        data.utterances.iter().map(|u| (u.id.as_str(), u)).collect();
    let labels = batch
        .utterances()
        .iter()
        .map(|u| data.window_labels(by_id[u.id.as_str()], cfg.utterance_length, &cfg.mfcc))
        .collect::<Result<Vec<_>>>()?;
    let mixed = mix_batch(&batch, &cfg.mix, derive_seed(s.mixing, &[step64]))?;
    let mut examples = Vec::with_capacity(batch.size());
    for (b, (u, labels)) in mixed.batch.utterances().iter().zip(labels).enumerate() {
        let input = model_input(&u.id, &u.waveform, cfg, norm)?;
        let t = match &input {
            ModelInput::Features(f) => f.nrows(),
            ModelInput::Samples(x) => frame_count(x.len(), cfg.mfcc.window, cfg.mfcc.hop),
        };
        if t != labels.len() {
            return Err(Error::DimensionMismatch {
                what: "label frames vs mixed-audio frames",
                expected: t,
                got: labels.len(),
            });
        }
        let mask = sample_mask_nonempty(
            t,
            cfg.encoder.mask_span,
            cfg.encoder.mask_start_prob,
            derive_seed(s.masking, &[step64, b as u64]),
        )?;
        examples.push(Example {
            id: u.id.clone(),
            speaker: u.speaker.clone(),
            input,
            labels,
            label_provenance: Provenance::Clean,
            mask,
        });
    }
    Ok(PreparedBatch {
        step,
        examples,
        specs: mixed.specs,
        tau: cfg.quantizer.tau_at(step, cfg.steps),
        gumbel_seed: derive_seed(s.gumbel, &[step64]),
        negative_seed: derive_seed(s.negatives, &[step64]),
    })
}
