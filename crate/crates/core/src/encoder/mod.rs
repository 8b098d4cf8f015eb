//! Masked-prediction transformer encoder with an intermediate tap.
//!
//! Pipeline per utterance: optional conv front end → linear projection to
//! the model width → mask-embedding corruption → sinusoidal positions →
//! pre-norm transformer blocks → final layer norm → linear content head.
//! Hidden state 0 is the corrupted projection; hidden state `i` is the
//! output of block `i`. The tap is hidden state `tap_layer`.

mod block;
mod conv;
mod mask;

pub use block::{Block, BlockCache};
pub use conv::{ConvFrontEnd, ConvLayer, CONV_LAYOUT};
pub use mask::{corrupt, sample_mask, sample_mask_nonempty, MaskSet};

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    prefixed, prefixed_mut, sinusoidal_positions, slice1, slice1_mut, LayerNorm, LayerNormCache,
    Linear, Params,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FrontEnd {
    /// Consumes precomputed feature frames (MFCC).
    #[default]
    Precomputed,
    /// Consumes raw samples through a strided conv stack.
    Conv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub model_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub tap_layer: usize,
    pub mask_span: usize,
    pub mask_start_prob: f64,
    pub front_end: FrontEnd,
    /// Pseudo-label vocabulary size k.
    pub num_classes: usize,
    /// Hidden channels of the conv front end.
    pub conv_channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_dim: 39,
            model_dim: 64,
            num_layers: 4,
            num_heads: 4,
            ffn_dim: 128,
            tap_layer: 2,
            mask_span: 10,
            mask_start_prob: 0.08,
            front_end: FrontEnd::Precomputed,
            num_classes: 16,
            conv_channels: 32,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tap_layer > self.num_layers || (self.num_layers > 0 && self.tap_layer == 0) {
            return Err(Error::invalid(format!(
                "tap_layer {} must lie in 1..={} (0 only when num_layers is 0)",
                self.tap_layer, self.num_layers
            )));
        }
        if self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return Err(Error::invalid("num_heads must divide model_dim"));
        }
        if self.mask_span == 0 {
            return Err(Error::invalid("mask_span must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.mask_start_prob) {
            return Err(Error::invalid("mask_start_prob outside [0, 1]"));
        }
        if self.input_dim == 0 || self.model_dim == 0 || self.num_classes == 0 {
            return Err(Error::invalid("encoder dimensions must be positive"));
        }
        Ok(())
    }

    /// Hidden states exposed for probing: input projection plus every block.
    pub fn num_hidden_states(&self) -> usize {
        self.num_layers + 1
    }
}

/// What the encoder consumes for one utterance.
#[derive(Debug, Clone, Copy)]
pub enum EncoderInput<'a, S> {
    Features(&'a Array2<S>),
    Samples(&'a [S]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<S> {
    pub tap: Array2<S>,
    pub final_: Array2<S>,
    pub content_logits: Array2<S>,
    /// Hidden states 0..=N.
    pub hidden: Vec<Array2<S>>,
    pub mask: MaskSet,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<S> {
    front: Option<conv::ConvCache<S>>,
    proj_in: Array2<S>,
    blocks: Vec<BlockCache<S>>,
    final_norm: LayerNormCache<S>,
    final_: Array2<S>,
    mask: MaskSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<S> {
    pub cfg: EncoderConfig,
    pub front: Option<ConvFrontEnd<S>>,
    pub proj: Linear<S>,
    pub mask_emb: Array1<S>,
    pub blocks: Vec<Block<S>>,
    pub final_norm: LayerNorm<S>,
    pub head: Linear<S>,
}

impl<S: Scalar> Encoder<S> {
    pub fn new(cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let front = match cfg.front_end {
            FrontEnd::Precomputed => None,
            FrontEnd::Conv => Some(ConvFrontEnd::new(cfg.conv_channels, cfg.input_dim, rng)),
        };
        let proj = Linear::new(cfg.input_dim, cfg.model_dim, rng);
        let mask_emb = Array1::from_shape_fn(cfg.model_dim, |_| S::of(rng.gen_range(0.0..1.0)));
        let blocks = (0..cfg.num_layers)
            .map(|_| Block::new(cfg.model_dim, cfg.num_heads, cfg.ffn_dim, rng))
            .collect();
        Ok(Encoder {
            cfg: cfg.clone(),
            front,
            proj,
            mask_emb,
            blocks,
            final_norm: LayerNorm::new(cfg.model_dim),
            head: Linear::new(cfg.model_dim, cfg.num_classes, rng),
        })
    }

    /// Number of frames the encoder produces for an input of `n` rows/samples.
    pub fn frames_for(&self, input: EncoderInput<'_, S>) -> usize {
        match (input, &self.front) {
            (EncoderInput::Samples(x), Some(f)) => f.frames_for(x.len()),
            (EncoderInput::Features(x), _) => x.nrows(),
            (EncoderInput::Samples(_), None) => 0,
        }
    }

    pub fn forward(&self, input: EncoderInput<'_, S>, mask: &MaskSet) -> Result<EncoderOutput<S>> {
        self.forward_train(input, mask).map(|(o, _)| o)
    }

    pub fn forward_train(
        &self,
        input: EncoderInput<'_, S>,
        mask: &MaskSet,
    ) -> Result<(EncoderOutput<S>, EncoderCache<S>)> {
        let (x, front_cache) = match (input, &self.front) {
            (EncoderInput::Features(x), None) => {
                if x.ncols() != self.cfg.input_dim {
                    return Err(Error::DimensionMismatch {
                        what: "encoder input dim",
                        expected: self.cfg.input_dim,
                        got: x.ncols(),
                    });
                }
                (x.clone(), None)
            }
            (EncoderInput::Samples(s), Some(front)) => {
                let (y, c) = front.forward(s);
                (y, Some(c))
            }
            (EncoderInput::Features(_), Some(_)) => {
                return Err(Error::invalid("conv front end expects raw samples"))
            }
            (EncoderInput::Samples(_), None) => {
                return Err(Error::invalid("precomputed front end expects feature frames"))
            }
        };
        let t = x.nrows();
        if t == 0 {
            return Err(Error::invalid("encoder input has no frames"));
        }
        if mask.len() != t {
            return Err(Error::DimensionMismatch {
                what: "mask length",
                expected: t,
                got: mask.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder input".into()));
        }
        let h0 = corrupt(&self.proj.forward(&x), mask, &self.mask_emb)?;
        let mut hidden = vec![h0];
        let mut caches = Vec::with_capacity(self.blocks.len());
        if !self.blocks.is_empty() {
            let mut h = &hidden[0] + &sinusoidal_positions::<S>(t, self.cfg.model_dim);
            for (i, b) in self.blocks.iter().enumerate() {
                let (out, c) = b.forward(&h);
                if out.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("encoder layer {}", i + 1)));
                }
                caches.push(c);
                hidden.push(out.clone());
                h = out;
            }
        }
        let (final_, final_cache) = self.final_norm.forward(hidden.last().expect("h0"));
        let content_logits = self.head.forward(&final_);
        let out = EncoderOutput {
            tap: hidden[self.cfg.tap_layer].clone(),
            final_: final_.clone(),
            content_logits,
            hidden,
            mask: mask.clone(),
        };
        let cache = EncoderCache {
            front: front_cache,
            proj_in: x,
            blocks: caches,
            final_norm: final_cache,
            final_,
            mask: mask.clone(),
        };
        Ok((out, cache))
    }

    /// Accumulates gradients of a scalar whose derivatives w.r.t. the content
    /// logits and (optionally) the tap are given.
    pub fn backward(
        &self,
        cache: &EncoderCache<S>,
        dlogits: &Array2<S>,
        dtap: Option<&Array2<S>>,
        grad: &mut Encoder<S>,
    ) {
        let dfinal = self.head.backward(&cache.final_, dlogits, &mut grad.head);
        let mut dh = self
            .final_norm
            .backward(&cache.final_norm, &dfinal, &mut grad.final_norm);
        for i in (0..self.blocks.len()).rev() {
            if let Some(d) = dtap.filter(|_| self.cfg.tap_layer == i + 1) {
                dh += d;
            }
            dh = self.blocks[i].backward(&cache.blocks[i], &dh, &mut grad.blocks[i]);
        }
        if let Some(d) = dtap.filter(|_| self.cfg.tap_layer == 0) {
            dh += d;
        }
        for &t in cache.mask.indices() {
            grad.mask_emb += &dh.row(t);
            dh.row_mut(t).fill(S::zero());
        }
        let dx = self.proj.backward(&cache.proj_in, &dh, &mut grad.proj);
        if let (Some(front), Some(fc), Some(gf)) =
            (&self.front, &cache.front, grad.front.as_mut())
        {
            front.backward(fc, &dx, gf);
        }
    }
}

impl<S: Scalar> Params<S> for Encoder<S> {
    fn params(&self) -> Vec<(String, Vec<usize>, &[S])> {
        let mut v = Vec::new();
        if let Some(f) = &self.front {
            v.extend(prefixed("front", f.params()));
        }
        v.extend(prefixed("proj", self.proj.params()));
        v.push((
            "mask_emb".into(),
            self.mask_emb.shape().to_vec(),
            slice1(&self.mask_emb),
        ));
        for (i, b) in self.blocks.iter().enumerate() {
            v.extend(prefixed(&format!("block{i}"), b.params()));
        }
        v.extend(prefixed("final_norm", self.final_norm.params()));
        v.extend(prefixed("head", self.head.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut [S])> {
        let mut v = Vec::new();
        if let Some(f) = &mut self.front {
            v.extend(prefixed_mut("front", f.params_mut()));
        }
        v.extend(prefixed_mut("proj", self.proj.params_mut()));
        v.push(("mask_emb".into(), slice1_mut(&mut self.mask_emb)));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            v.extend(prefixed_mut(&format!("block{i}"), b.params_mut()));
        }
        v.extend(prefixed_mut("final_norm", self.final_norm.params_mut()));
        v.extend(prefixed_mut("head", self.head.params_mut()));
        v
    }
}
