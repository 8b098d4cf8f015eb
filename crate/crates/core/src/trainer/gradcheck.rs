use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::MixConfig;
use crate::corpus::synth_corpus;
use crate::dsp::{frame_count, MfccConfig};
use crate::encoder::{EncoderConfig, FrontEnd};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::Model;
use crate::nn::Params;
use crate::pseudolabel::KmeansOptions;
use crate::quantizer::QuantizerConfig;
use crate::rng::{derive_seed, rng_from};

use super::{
    corpus_features, init_state, loss_and_grad, mfcc_labels, prepare_batch, QuantMode, Seeds,
    TrainConfig, TrainData,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckOptions {
    pub seed: u64,
    /// Coordinates to sample across all tensors.
    pub coordinates: usize,
    pub step_size: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Restrict the check to parameters whose name starts with this prefix.
    pub only: Option<String>,
    pub front_end: FrontEnd,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            seed: 1,
            coordinates: 200,
            step_size: 1e-4,
            floor: 1e-6,
            only: None,
            front_end: FrontEnd::Precomputed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub coordinates: usize,
    pub tensors: usize,
    pub loss: f64,
    pub max_rel_error: f64,
    pub worst: Option<CoordinateCheck>,
    pub checks: Vec<CoordinateCheck>,
}

/// Tiny configuration: T = 8 frames, d = 16, two blocks, B = 3, soft
/// quantizer, mixing on.
pub fn tiny_config(seed: u64, front_end: FrontEnd) -> TrainConfig {
    let mfcc = MfccConfig::default();
    TrainConfig {
        steps: 10,
        batch_size: 3,
        utterance_length: mfcc.window + 7 * mfcc.hop,
        mix: MixConfig {
            probability: 0.5,
            ..MixConfig::default()
        },
        losses: LossWeights {
            num_negatives: 4,
            ..LossWeights::default()
        },
        encoder: EncoderConfig {
            input_dim: mfcc.dim(),
            model_dim: 16,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 24,
            tap_layer: 1,
            mask_span: 2,
            mask_start_prob: 0.3,
            front_end,
            num_classes: 4,
            conv_channels: 4,
        },
        quantizer: QuantizerConfig {
            groups: 2,
            entries: 4,
            ..QuantizerConfig::default()
        },
        mfcc,
        seeds: Seeds::from_base(seed),
        ..TrainConfig::default()
    }
}

/// Central finite differences of the full loss against the analytic
/// gradient on a tiny model and a synthetic mixed batch.
pub fn grad_check(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let cfg = tiny_config(opts.seed, opts.front_end);
    let utts = synth_corpus::<f64>(3, 2, 0.1, 16_000, derive_seed(opts.seed, &[0x6C]))?;
    let feats = corpus_features(&utts, &cfg.mfcc)?;
    let (_, labels) = mfcc_labels(
        &feats,
        &KmeansOptions {
            k: cfg.encoder.num_classes,
            seed: opts.seed,
            ..KmeansOptions::default()
        },
    )?;
    let data = TrainData::new(utts, labels)?;
    let state = init_state(&cfg, &data)?;
    let batch = prepare_batch(&cfg, &data, &state.norm, 0)?;
    let t = frame_count(cfg.utterance_length, cfg.mfcc.window, cfg.mfcc.hop);
    if t > 8 || cfg.encoder.model_dim > 16 {
        return Err(Error::invalid("gradient check needs T <= 8 and d <= 16"));
    }
    check_model(&state.model, &cfg, &batch, opts)
}

fn check_model(
    model: &Model<f64>,
    cfg: &TrainConfig,
    batch: &super::PreparedBatch<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (base, grad) = loss_and_grad(model, batch, cfg, QuantMode::Soft, true)?;
    let grad = grad.expect("gradient requested");
    let gp = grad.params();
    let tensors: Vec<usize> = gp
        .iter()
        .enumerate()
        .filter(|(_, (n, _, _))| opts.only.as_ref().map_or(true, |p| n.starts_with(p.as_str())))
        .map(|(i, _)| i)
        .collect();
    if tensors.is_empty() {
        return Err(Error::invalid("no parameters match the gradient-check filter"));
    }
    // every tensor gets an even share, capped by its size
    let share = opts.coordinates.div_ceil(tensors.len()).max(1);
    let mut rng = rng_from(opts.seed, &[0x6CC]);
    let mut coords = Vec::new();
    for &ti in &tensors {
        let len = gp[ti].2.len();
        let picks = if share >= len {
            (0..len).collect()
        } else {
            index::sample(&mut rng, len, share).into_vec()
        };
        coords.extend(picks.into_iter().map(|i| (ti, i)));
    }
    while coords.len() < opts.coordinates {
        let ti = tensors[rng.gen_range(0..tensors.len())];
        coords.push((ti, rng.gen_range(0..gp[ti].2.len())));
    }
    let h = opts.step_size;
    let eval = |ti: usize, i: usize, delta: f64| -> Result<f64> {
        let mut m = model.clone();
        m.params_mut()[ti].1[i] += delta;
        Ok(loss_and_grad(&m, batch, cfg, QuantMode::Soft, false)?.0.total)
    };
    let mut checks = Vec::with_capacity(coords.len());
    for (ti, i) in coords {
        let numeric = (eval(ti, i, h)? - eval(ti, i, -h)?) / (2.0 * h);
        let analytic = gp[ti].2[i];
        let rel_error =
            (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(opts.floor);
        checks.push(CoordinateCheck {
            name: gp[ti].0.clone(),
            index: i,
            analytic,
            numeric,
            rel_error,
        });
    }
    let worst = checks
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .cloned();
    Ok(GradCheckReport {
        seed: opts.seed,
        coordinates: checks.len(),
        tensors: tensors.len(),
        loss: base.total,
        max_rel_error: worst.as_ref().map_or(0.0, |w| w.rel_error),
        worst,
        checks,
    })
}
