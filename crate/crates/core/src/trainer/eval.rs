use ndarray::{Array2, Axis};

use crate::augment::MixConfig;
use crate::encoder::{Encoder, MaskSet};
use crate::error::Result;
use crate::model::Model;
use crate::scalar::Scalar;

use super::{prepare_batch, FeatureNorm, ModelInput, Seeds, TrainConfig, TrainData};

/// Unmasked forward pass per input; returns one `n × d` matrix per hidden
/// state holding the frame-mean of that layer for every input.
pub fn layer_embeddings<S: Scalar>(encoder: &Encoder<S>, inputs: &[ModelInput<S>]) -> Result<Vec<Array2<S>>> {
    let layers = encoder.cfg.num_hidden_states();
    let d = encoder.cfg.model_dim;
    let mut out = vec![Array2::zeros((inputs.len(), d)); layers];
    for (i, x) in inputs.iter().enumerate() {
        let t = encoder.frames_for(x.as_input());
        let o = encoder.forward(x.as_input(), &MaskSet::empty(t))?;
        for (j, h) in o.hidden.iter().enumerate() {
            out[j].row_mut(i).assign(&h.mean_axis(Axis(0)).expect("t >= 1"));
        }
    }
    Ok(out)
}

/// Fraction of masked frames whose arg-max content logit equals the
/// pseudo-label, over `batches` clean batches drawn under `seed`.
pub fn masked_accuracy<S: Scalar>(
    model: &Model<S>,
    cfg: &TrainConfig,
    data: &TrainData<S>,
    norm: &FeatureNorm,
    batches: usize,
    seed: u64,
) -> Result<f64> {
    let eval_cfg = TrainConfig {
        mix: MixConfig {
            probability: 0.0,
            ..cfg.mix.clone()
        },
        seeds: Seeds::from_base(seed),
        ..cfg.clone()
    };
    let (mut hit, mut total) = (0usize, 0usize);
    for b in 0..batches {
        let batch = prepare_batch(&eval_cfg, data, norm, b)?;
        for e in &batch.examples {
            let o = model.encoder.forward(e.input.as_input(), &e.mask)?;
            for &t in e.mask.indices() {
                let row = o.content_logits.row(t);
                let best = row
                    .iter()
                    .enumerate()
                    .fold((0, S::neg_infinity()), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc })
                    .0;
                hit += usize::from(best == e.labels[t]);
                total += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}
