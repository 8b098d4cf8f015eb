//! Encoder plus quantizer: everything the optimizer updates.

use rand::Rng;

use crate::encoder::{Encoder, EncoderConfig};
use crate::error::Result;
use crate::nn::{prefixed, prefixed_mut, Params};
use crate::quantizer::{Quantizer, QuantizerConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    pub encoder: Encoder<S>,
    pub quantizer: Quantizer<S>,
}

impl<S: Scalar> Model<S> {
    /// The quantizer maps tap rows (model width) to targets of the same width.
    pub fn new(enc: &EncoderConfig, quant: &QuantizerConfig, rng: &mut impl Rng) -> Result<Self> {
        let encoder = Encoder::new(enc, rng)?;
        let quantizer = Quantizer::new(enc.model_dim, enc.model_dim, quant, rng)?;
        Ok(Model { encoder, quantizer })
    }
}

impl<S: Scalar> Params<S> for Model<S> {
    fn params(&self) -> Vec<(String, Vec<usize>, &[S])> {
        let mut v = prefixed("encoder", self.encoder.params());
        v.extend(prefixed("quantizer", self.quantizer.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut [S])> {
        let mut v = prefixed_mut("encoder", self.encoder.params_mut());
        v.extend(prefixed_mut("quantizer", self.quantizer.params_mut()));
        v
    }
}
