use ndarray::{Array2, Axis};

use crate::dsp::Provenance;
use crate::encoder::EncoderCache;
use crate::error::{Error, Result};
use crate::losses::{combine, content_loss_batch, contrastive_loss, diversity_loss, LossBreakdown};
use crate::model::Model;
use crate::nn::Params;
use crate::quantizer::{frame_noise, usage_stats, QuantizeCache, QuantizeOutput};
use crate::scalar::Scalar;

use super::data::PreparedBatch;
use super::{AdamConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    /// Straight-through argmax (training).
    Hard,
    /// Soft probabilities in the forward pass (gradient checks).
    Soft,
}

/// Total loss of a prepared batch and, optionally, its parameter gradient.
pub fn loss_and_grad<S: Scalar>(
    model: &Model<S>,
    batch: &PreparedBatch<S>,
    cfg: &TrainConfig,
    mode: QuantMode,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Model<S>>)> {
    let w = &cfg.losses;
    if let Some(e) = batch
        .examples
        .iter()
        .find(|e| e.label_provenance != Provenance::Clean)
    {
        return Err(Error::invalid(format!(
            "content labels for '{}' do not come from clean audio",
            e.id
        )));
    }
    let mut outs = Vec::with_capacity(batch.examples.len());
    let mut caches: Vec<EncoderCache<S>> = Vec::with_capacity(batch.examples.len());
    for e in &batch.examples {
        let (o, c) = model.encoder.forward_train(e.input.as_input(), &e.mask)?;
        outs.push(o);
        caches.push(c);
    }

    let items: Vec<_> = outs
        .iter()
        .zip(&batch.examples)
        .map(|(o, e)| (&o.content_logits, e.labels.as_slice(), &e.mask))
        .collect();
    let (content, dlogits, masked_frames) = content_loss_batch(&items)?;

    let mut dtaps: Vec<Option<Array2<S>>> = vec![None; outs.len()];
    let mut contrastive = S::zero();
    let mut diversity = S::zero();
    let (mut positives, mut negatives) = (0, 0);
    let mut qgrad = if want_grad { Some(model.quantizer.zeros_like()) } else { None };
    if cfg.speaker_loss {
        let q = &model.quantizer;
        let gv = q.groups * q.entries;
        let tau = S::of(batch.tau);
        let latents: Vec<Array2<S>> = outs
            .iter()
            .map(|o| o.tap.select(Axis(0), o.mask.indices()))
            .collect();
        let mut quantized: Vec<(QuantizeOutput<S>, QuantizeCache<S>)> = Vec::with_capacity(outs.len());
        for (l, e) in latents.iter().zip(&batch.examples) {
            let noise = frame_noise::<S>(batch.gumbel_seed, &e.id, e.mask.indices(), gv);
            quantized.push(q.quantize(l, &noise, tau, mode == QuantMode::Hard)?);
        }
        let qs: Vec<Array2<S>> = quantized.iter().map(|(o, _)| o.q.clone()).collect();
        let c = contrastive_loss(&latents, &qs, w, batch.negative_seed)?;
        let probs: Vec<&Array2<S>> = quantized.iter().map(|(o, _)| &o.probs).collect();
        let pbar = usage_stats(&probs, q.groups)?;
        let (div, dpbar) = diversity_loss(&pbar)?;
        contrastive = c.loss;
        diversity = div;
        positives = c.positives;
        negatives = c.negatives;
        if let Some(qg) = qgrad.as_mut() {
            // p̄ is the mean over every quantized frame of the batch
            let flat = dpbar
                .into_shape_with_order((1, gv))
                .expect("contiguous")
                * (S::of(w.alpha) / S::of_usize(masked_frames));
            for (b, ((_, cache), o)) in quantized.iter().zip(&outs).enumerate() {
                let n = c.dquantized[b].nrows();
                let dprobs = flat.broadcast((n, gv)).expect("row broadcast").to_owned();
                let dlat = q.backward(cache, &c.dquantized[b], Some(&dprobs), qg) + &c.dlatents[b];
                let mut dtap = Array2::zeros(o.tap.raw_dim());
                for (r, &t) in o.mask.indices().iter().enumerate() {
                    dtap.row_mut(t).assign(&dlat.row(r));
                }
                dtaps[b] = Some(dtap);
            }
        }
    }

    let mut breakdown = combine(contrastive.as_f64(), diversity.as_f64(), content.as_f64(), w)?;
    breakdown.positives = positives;
    breakdown.negatives = negatives;
    breakdown.masked_frames = masked_frames;
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite(format!("total loss at step {}", batch.step)));
    }
    if !want_grad {
        return Ok((breakdown, None));
    }
    let mut grad = model.zeros_like();
    let beta = S::of(w.beta);
    for (b, cache) in caches.iter().enumerate() {
        let dl = &dlogits[b] * beta;
        model
            .encoder
            .backward(cache, &dl, dtaps[b].as_ref(), &mut grad.encoder);
    }
    grad.quantizer = qgrad.expect("allocated with want_grad");
    Ok((breakdown, Some(grad)))
}

/// Adam moments for every parameter of a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<S> {
    pub m: Model<S>,
    pub v: Model<S>,
    /// Updates applied so far.
    pub t: usize,
}

impl<S: Scalar> Adam<S> {
    pub fn new(model: &Model<S>) -> Self {
        Adam {
            m: model.zeros_like(),
            v: model.zeros_like(),
            t: 0,
        }
    }

    pub fn update(&mut self, model: &mut Model<S>, grad: &Model<S>, lr: f64, cfg: &AdamConfig) {
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
        let c1 = S::one() - b1.powi(t);
        let c2 = S::one() - b2.powi(t);
        let (lr, eps) = (S::of(lr), S::of(cfg.eps));
        let g = grad.params();
        for (((_, p), (_, m)), ((_, v), (_, _, g))) in model
            .params_mut()
            .into_iter()
            .zip(self.m.params_mut())
            .zip(self.v.params_mut().into_iter().zip(g))
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (S::one() - b1) * g[i];
                v[i] = b2 * v[i] + (S::one() - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Global L2 norm of a gradient.
pub fn grad_norm<S: Scalar>(grad: &Model<S>) -> f64 {
    grad.params()
        .iter()
        .flat_map(|(_, _, d)| d.iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn clip<S: Scalar>(grad: &mut Model<S>, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let n = grad_norm(grad);
    if n > max_norm {
        let s = S::of(max_norm / n);
        for (_, p) in grad.params_mut() {
            p.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Mutable training state; together with the config and corpus it fixes
/// every later step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<S> {
    pub model: Model<S>,
    pub adam: Adam<S>,
    /// Next step to run.
    pub step: usize,
    pub norm: super::FeatureNorm,
    pub metrics: Vec<super::StepMetrics>,
}

/// One optimizer step on a prepared batch.
pub fn apply_step<S: Scalar>(
    state: &mut TrainState<S>,
    batch: &PreparedBatch<S>,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    let (breakdown, grad) = loss_and_grad(&state.model, batch, cfg, QuantMode::Hard, true)?;
    let mut grad = grad.expect("gradient requested");
    clip(&mut grad, cfg.max_grad_norm);
    let lr = cfg.lr_at(batch.step);
    state.adam.update(&mut state.model, &grad, lr, &cfg.adam);
    if !state.model.is_finite() {
        return Err(Error::NonFinite(format!("parameters after step {}", batch.step)));
    }
    Ok(breakdown)
}
