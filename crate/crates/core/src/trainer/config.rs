use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::MixConfig;
use crate::dsp::MfccConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::quantizer::QuantizerConfig;
use crate::rng::derive_seed;

/// Every random stream of a run has its own seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub model: u64,
    pub mixing: u64,
    pub masking: u64,
    pub negatives: u64,
    pub gumbel: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::from_base(0)
    }
}

impl Seeds {
    pub fn from_base(base: u64) -> Self {
        let s = |i| derive_seed(base, &[i]);
        Seeds {
            data: s(1),
            model: s(2),
            mixing: s(3),
            masking: s(4),
            negatives: s(5),
            gumbel: s(6),
        }
    }

    /// Applies `--seed-<name>` style overrides.
    pub fn set(&mut self, name: &str, value: u64) -> Result<()> {
        let slot = match name {
            "data" => &mut self.data,
            "model" => &mut self.model,
            "mixing" => &mut self.mixing,
            "masking" => &mut self.masking,
            "negatives" => &mut self.negatives,
            "gumbel" => &mut self.gumbel,
            _ => return Err(Error::invalid(format!("unknown seed '{name}'"))),
        };
        *slot = value;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Samples per batch member.
    pub utterance_length: usize,
    /// Peak learning rate.
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub adam: AdamConfig,
    /// Global gradient-norm clip; 0 disables it.
    pub max_grad_norm: f64,
    pub mix: MixConfig,
    pub losses: LossWeights,
    /// When false the contrastive and diversity terms are dropped and the
    /// quantizer is not trained.
    pub speaker_loss: bool,
    pub encoder: EncoderConfig,
    pub quantizer: QuantizerConfig,
    pub mfcc: MfccConfig,
    pub seeds: Seeds,
    /// Save a checkpoint every this many steps; 0 saves only at the end.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 300,
            batch_size: 8,
            utterance_length: 8000,
            learning_rate: 2e-3,
            warmup_fraction: 0.08,
            adam: AdamConfig::default(),
            max_grad_norm: 0.0,
            mix: MixConfig::default(),
            losses: LossWeights::default(),
            speaker_loss: true,
            encoder: EncoderConfig::default(),
            quantizer: QuantizerConfig::default(),
            mfcc: MfccConfig::default(),
            seeds: Seeds::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("steps must be >= 1"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::invalid("learning_rate must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::invalid("warmup_fraction outside [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.mix.probability) {
            return Err(Error::invalid("mix.probability outside [0, 1]"));
        }
        if self.batch_size == 0 || self.utterance_length < self.mfcc.window {
            return Err(Error::invalid(
                "batch_size must be >= 1 and utterance_length at least one MFCC window",
            ));
        }
        if self.encoder.front_end == crate::encoder::FrontEnd::Precomputed
            && self.encoder.input_dim != self.mfcc.dim()
        {
            return Err(Error::invalid(format!(
                "encoder.input_dim {} does not match the MFCC dimension {}",
                self.encoder.input_dim,
                self.mfcc.dim()
            )));
        }
        self.encoder.validate()?;
        self.mfcc.validate()?;
        self.losses.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    /// Number of warmup steps (at least one).
    pub fn warmup_steps(&self) -> usize {
        ((self.warmup_fraction * self.steps as f64).round() as usize).max(1)
    }

    /// Linear warmup to the peak, then linear decay to zero at the last step.
    pub fn lr_at(&self, step: usize) -> f64 {
        let w = self.warmup_steps();
        if step < w {
            self.learning_rate * (step + 1) as f64 / w as f64
        } else if self.steps <= w {
            self.learning_rate
        } else {
            let left = (self.steps - step) as f64 / (self.steps - w) as f64;
            self.learning_rate * left.clamp(0.0, 1.0)
        }
    }

    /// Applies `key=value` overrides where `key` is a dotted path to an
    /// existing field and `value` is JSON (bare strings are accepted).
    pub fn with_overrides<'a>(&self, pairs: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for pair in pairs {
            let (key, raw) = pair
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("override '{pair}' is not key=value")))?;
            let value: Value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, key, value)?;
        }
        serde_json::from_value(doc)
            .map_err(|e| Error::invalid(format!("invalid config after overrides: {e}")))
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let unknown = || Error::invalid(format!("unknown config key '{key}'"));
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(unknown)?;
        if i + 1 == parts.len() {
            // Option fields serialize as null and still count as known keys.
            let slot = obj.get_mut(*part).ok_or_else(unknown)?;
            *slot = value;
            return Ok(());
        }
        cur = obj.get_mut(*part).ok_or_else(unknown)?;
    }
    Err(unknown())
}
