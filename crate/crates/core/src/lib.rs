//! Self-supervised speech pre-training with speaker-aware augmentation.
//!
//! The pipeline: synthesize or load a corpus, extract MFCCs, cluster them into
//! pseudo-labels, pre-train a masked-prediction encoder whose intermediate
//! layer is shaped by an utterance-wise contrastive loss against a
//! Gumbel-softmax quantizer, mix utterances to simulate overlapping speech,
//! re-cluster from the trained encoder, and probe layers for speaker
//! information.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root pick one.

// NaN-rejecting `!(x > 0)` guards and index loops over parallel arrays are
// deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod augment;
pub mod corpus;
pub mod dsp;
pub mod encoder;
pub mod error;
pub mod losses;
pub mod model;
pub mod nn;
pub mod probe;
pub mod pseudolabel;
pub mod quantizer;
pub mod rng;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Waveform32 = corpus::Waveform<f32>;
pub type Waveform64 = corpus::Waveform<f64>;
pub type Batch32 = corpus::Batch<f32>;
pub type Batch64 = corpus::Batch<f64>;
pub type FeatureSequence32 = dsp::FeatureSequence<f32>;
pub type FeatureSequence64 = dsp::FeatureSequence<f64>;
pub type KmeansModel32 = pseudolabel::KmeansModel<f32>;
pub type KmeansModel64 = pseudolabel::KmeansModel<f64>;
pub type Encoder32 = encoder::Encoder<f32>;
pub type Encoder64 = encoder::Encoder<f64>;
pub type Quantizer32 = quantizer::Quantizer<f32>;
pub type Quantizer64 = quantizer::Quantizer<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
