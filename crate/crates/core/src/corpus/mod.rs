//! Audio containers, manifests, batching and the synthetic speaker corpus.

mod manifest;
mod synth;
pub mod wav;

pub use manifest::{load_manifest, write_manifest, UtteranceDescriptor};
pub use synth::{synth_corpus, SynthSpeaker};

use rand::seq::index;

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scalar::Scalar;

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<S> {
    samples: Vec<S>,
    sample_rate: u32,
}

impl<S: Scalar> Waveform<S> {
    pub fn new(samples: Vec<S>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if samples.is_empty() {
            return Err(Error::invalid("waveform must contain at least one sample"));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i}")));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[S] {
        &self.samples
    }

    pub(crate) fn samples_mut(&mut self) -> &mut [S] {
        &mut self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Center crop when longer than `len`, trailing zero pad when shorter.
    pub fn fit_to_length(&self, len: usize) -> Waveform<S> {
        let n = self.samples.len();
        let samples = if n >= len {
            let start = (n - len) / 2;
            self.samples[start..start + len].to_vec()
        } else {
            let mut v = self.samples.clone();
            v.resize(len, S::zero());
            v
        };
        Waveform {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    pub fn cast<T: Scalar>(&self) -> Waveform<T> {
        Waveform {
            samples: self.samples.iter().map(|&x| T::of(x.as_f64())).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance<S> {
    pub id: String,
    pub waveform: Waveform<S>,
    pub speaker: Option<String>,
}

/// B utterances sharing one length L.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<S> {
    utterances: Vec<Utterance<S>>,
    length: usize,
}

impl<S: Scalar> Batch<S> {
    /// Builds a batch from utterances that already share one length.
    pub fn new(utterances: Vec<Utterance<S>>) -> Result<Self> {
        let first = utterances
            .first()
            .ok_or_else(|| Error::invalid("batch must hold at least one utterance"))?;
        let length = first.waveform.len();
        if let Some(u) = utterances.iter().find(|u| u.waveform.len() != length) {
            return Err(Error::DimensionMismatch {
                what: "batch member length",
                expected: length,
                got: u.waveform.len(),
            });
        }
        Ok(Batch {
            utterances,
            length,
        })
    }

    pub fn utterances(&self) -> &[Utterance<S>] {
        &self.utterances
    }

    pub(crate) fn utterances_mut(&mut self) -> &mut [Utterance<S>] {
        &mut self.utterances
    }

    pub fn size(&self) -> usize {
        self.utterances.len()
    }

    /// Common length L in samples.
    pub fn length(&self) -> usize {
        self.length
    }

    pub fn ids(&self) -> Vec<&str> {
        self.utterances.iter().map(|u| u.id.as_str()).collect()
    }
}

/// Offset (in samples) that `fit_to_length` crops from the start of an
/// utterance of `n` samples.
pub fn crop_offset(n: usize, len: usize) -> usize {
    n.saturating_sub(len) / 2
}

/// Draws `batch_size` distinct utterances under `seed` and fits each to
/// `length` samples.
pub fn make_batch<S: Scalar>(
    utterances: &[Utterance<S>],
    batch_size: usize,
    length: usize,
    seed: u64,
) -> Result<Batch<S>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    if length == 0 {
        return Err(Error::invalid("batch length must be at least 1"));
    }
    if batch_size > utterances.len() {
        return Err(Error::invalid(format!(
            "batch size {batch_size} exceeds the {} available utterances",
            utterances.len()
        )));
    }
    let mut rng = rng_from(seed, &[]);
    let picked = index::sample(&mut rng, utterances.len(), batch_size);
    let members = picked
        .iter()
        .map(|i| {
            let u = &utterances[i];
            Utterance {
                id: u.id.clone(),
                waveform: u.waveform.fit_to_length(length),
                speaker: u.speaker.clone(),
            }
        })
        .collect();
    Batch::new(members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn utt(id: &str, samples: Vec<f64>) -> Utterance<f64> {
        Utterance {
            id: id.into(),
            waveform: Waveform::new(samples, 16_000).unwrap(),
            speaker: None,
        }
    }

    #[test]
    fn waveform_rejects_bad_input() {
        assert!(Waveform::<f64>::new(vec![], 16_000).is_err());
        assert!(Waveform::new(vec![0.0f64], 0).is_err());
        assert!(Waveform::new(vec![f64::NAN], 16_000).is_err());
    }

    #[test]
    fn exact_length_is_unmodified() {
        let u = utt("a", (0..8).map(f64::from).collect());
        let b = make_batch(std::slice::from_ref(&u), 1, 8, 3).unwrap();
        assert_eq!(b.utterances()[0].waveform, u.waveform);
    }

    #[test]
    fn short_utterance_is_tail_padded() {
        let u = utt("a", vec![1.0; 4]);
        let b = make_batch(&[u], 1, 8, 0).unwrap();
        assert_eq!(
            b.utterances()[0].waveform.samples(),
            &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn long_utterance_is_center_cropped() {
        let u = utt("a", (0..10).map(f64::from).collect());
        let b = make_batch(&[u], 1, 4, 0).unwrap();
        assert_eq!(b.utterances()[0].waveform.samples(), &[3.0, 4.0, 5.0, 6.0]);
        assert_eq!(crop_offset(10, 4), 3);
    }

    #[test]
    fn oversized_batch_is_an_error() {
        let u = utt("a", vec![0.0; 4]);
        assert!(make_batch(&[u], 2, 4, 0).is_err());
    }

    #[test]
    fn same_seed_same_batch() {
        let us: Vec<_> = (0..10)
            .map(|i| utt(&format!("u{i}"), vec![i as f64; 5 + i]))
            .collect();
        let a = make_batch(&us, 4, 7, 11).unwrap();
        let b = make_batch(&us, 4, 7, 11).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn every_member_has_length_l(
            lens in proptest::collection::vec(1usize..64, 1..12),
            l in 1usize..80,
            seed in any::<u64>(),
            bfrac in 0.0f64..1.0,
        ) {
            let us: Vec<_> = lens.iter().enumerate()
                .map(|(i, &n)| utt(&format!("u{i}"), vec![0.5; n]))
                .collect();
            let b = 1 + ((us.len() - 1) as f64 * bfrac) as usize;
            let batch = make_batch(&us, b, l, seed).unwrap();
            prop_assert_eq!(batch.size(), b);
            for u in batch.utterances() {
                prop_assert_eq!(u.waveform.len(), l);
            }
        }
    }
}
