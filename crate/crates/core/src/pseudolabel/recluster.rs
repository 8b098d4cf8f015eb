use crate::dsp::FeatureSequence;
use crate::encoder::{Encoder, EncoderInput, MaskSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{assign, fit, pool_frames, KmeansModel, KmeansOptions, LabelSource, PseudoLabelSequence};

/// Next-iteration labels: runs the frozen encoder unmasked over every
/// input, clusters hidden state `layer` across the corpus and assigns each
/// frame its nearest center.
pub fn recluster_from_embeddings<S: Scalar>(
    encoder: &Encoder<S>,
    inputs: &[(&str, EncoderInput<'_, S>)],
    layer: usize,
    opts: &KmeansOptions,
) -> Result<(KmeansModel<S>, Vec<PseudoLabelSequence>)> {
    if layer > encoder.cfg.num_layers {
        return Err(Error::invalid(format!(
            "layer {layer} does not exist: the encoder has hidden states 0..={}",
            encoder.cfg.num_layers
        )));
    }
    let mut embedded = Vec::with_capacity(inputs.len());
    for (id, x) in inputs {
        let t = encoder.frames_for(*x);
        let out = encoder.forward(*x, &MaskSet::empty(t))?;
        embedded.push(FeatureSequence::new(*id, out.hidden[layer].clone(), 0.0)?);
    }
    let model = fit(&pool_frames(&embedded)?, opts)?;
    let source = LabelSource::Embedding { layer };
    let labels = embedded
        .iter()
        .map(|f| assign(&model, f, source))
        .collect::<Result<Vec<_>>>()?;
    Ok((model, labels))
}
