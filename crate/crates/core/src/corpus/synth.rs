//! Synthetic multi-speaker corpus.
//!
//! A speaker is a harmonic stack: a fundamental frequency plus a fixed
//! per-harmonic amplitude profile. Utterances are sequences of short
//! vowel-like units (a formant envelope shared by all speakers) rendered on
//! the speaker's stack, with random phases, small pitch jitter and additive
//! noise.

use rand::Rng;

use super::{Utterance, Waveform};
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scalar::Scalar;

const F0_LOW: f64 = 100.0;
const F0_HIGH: f64 = 240.0;
const MAX_HARMONIC_HZ: f64 = 4000.0;
const PITCH_JITTER: f64 = 0.03;
const NOISE_LEVEL: f64 = 0.01;
const UNIT_MIN_SECS: f64 = 0.06;
const UNIT_MAX_SECS: f64 = 0.16;
const SMOOTHING_SECS: f64 = 0.01;

/// (F1, F2) in Hz for the shared content units.
const UNITS: [(f64, f64); 5] = [
    (300.0, 2300.0),
    (700.0, 1200.0),
    (500.0, 900.0),
    (400.0, 2000.0),
    (350.0, 800.0),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpeaker {
    pub tag: String,
    pub f0: f64,
    /// Amplitude of harmonic h+1.
    pub harmonics: Vec<f64>,
}

fn unit_gain(unit: usize, freq: f64) -> f64 {
    let (f1, f2) = UNITS[unit];
    0.15 + (-((freq - f1) / 150.0).powi(2)).exp() + 0.7 * (-((freq - f2) / 250.0).powi(2)).exp()
}

/// Speaker generators for `num_speakers`; fundamentals are evenly spread
/// over [100, 240] Hz (with a seeded offset below one spacing) so they are
/// always distinct.
pub fn speakers(num_speakers: usize, seed: u64) -> Vec<SynthSpeaker> {
    let spacing = (F0_HIGH - F0_LOW) / num_speakers as f64;
    (0..num_speakers)
        .map(|s| {
            let mut rng = rng_from(seed, &[0x5EED, s as u64]);
            let f0 = F0_LOW + spacing * (s as f64 + rng.gen_range(0.1..0.9));
            let tilt = rng.gen_range(0.6..1.4);
            let count = (MAX_HARMONIC_HZ / f0).floor() as usize;
            let harmonics = (1..=count)
                .map(|h| (h as f64).powf(-tilt) * (1.0 + 0.5 * rng.gen_range(-1.0..1.0)))
                .collect();
            SynthSpeaker {
                tag: format!("spk{s:03}"),
                f0,
                harmonics,
            }
        })
        .collect()
}

fn render(
    speaker: &SynthSpeaker,
    len: usize,
    sample_rate: u32,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let sr = f64::from(sample_rate);
    let nyquist = sr / 2.0;

    // unit sequence, one index per sample
    let mut unit_of = Vec::with_capacity(len);
    while unit_of.len() < len {
        let unit = rng.gen_range(0..UNITS.len());
        let dur = (rng.gen_range(UNIT_MIN_SECS..UNIT_MAX_SECS) * sr).round() as usize;
        let n = dur.max(1).min(len - unit_of.len());
        unit_of.extend(std::iter::repeat_n(unit, n));
    }

    let f0 = speaker.f0 * (1.0 + rng.gen_range(-PITCH_JITTER..PITCH_JITTER));
    let level = rng.gen_range(0.5..1.0);
    let alpha = 1.0 - (-1.0 / (SMOOTHING_SECS * sr)).exp();
    let mut out = vec![0.0; len];
    for (h, &amp) in speaker.harmonics.iter().enumerate() {
        let freq = f0 * (h + 1) as f64;
        if freq >= nyquist {
            break;
        }
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let step = std::f64::consts::TAU * freq / sr;
        let gains: Vec<f64> = (0..UNITS.len()).map(|u| unit_gain(u, freq)).collect();
        let mut env = gains[unit_of[0]];
        for (t, y) in out.iter_mut().enumerate() {
            env += alpha * (gains[unit_of[t]] - env);
            *y += amp * env * (phase + step * t as f64).sin();
        }
    }
    let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-9);
    for y in &mut out {
        *y = level * 0.5 * *y / peak + NOISE_LEVEL * rng.gen_range(-1.0..1.0);
    }
    out
}

/// Deterministic corpus of `num_speakers * utts_per_speaker` tagged
/// utterances, each `duration` seconds long.
pub fn synth_corpus<S: Scalar>(
    num_speakers: usize,
    utts_per_speaker: usize,
    duration: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<Vec<Utterance<S>>> {
    if num_speakers == 0 || utts_per_speaker == 0 {
        return Err(Error::invalid("speaker and utterance counts must be >= 1"));
    }
    if sample_rate == 0 || !(duration > 0.0) {
        return Err(Error::invalid("duration and sample rate must be positive"));
    }
    let len = ((duration * f64::from(sample_rate)).round() as usize).max(1);
    let mut out = Vec::with_capacity(num_speakers * utts_per_speaker);
    for spk in speakers(num_speakers, seed) {
        for u in 0..utts_per_speaker {
            let mut rng = rng_from(seed, &[crate::rng::hash_str(&spk.tag), u as u64]);
            let samples = render(&spk, len, sample_rate, &mut rng)
                .into_iter()
                .map(S::of)
                .collect();
            out.push(Utterance {
                id: format!("{}_u{u:03}", spk.tag),
                waveform: Waveform::new(samples, sample_rate)?,
                speaker: Some(spk.tag.clone()),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_corpus() {
        let c = synth_corpus::<f64>(1, 1, 0.1, 16_000, 0).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].speaker.as_deref(), Some("spk000"));
        assert_eq!(c[0].waveform.len(), 1600);
    }

    #[test]
    fn speakers_have_distinct_fundamentals() {
        let s = speakers(2, 9);
        assert!((s[0].f0 - s[1].f0).abs() > 1.0);
        let many = speakers(16, 9);
        for w in many.windows(2) {
            assert!(w[1].f0 > w[0].f0);
        }
    }

    #[test]
    fn seeded_reproducibility() {
        let a = synth_corpus::<f64>(2, 2, 0.05, 16_000, 5).unwrap();
        let b = synth_corpus::<f64>(2, 2, 0.05, 16_000, 5).unwrap();
        let c = synth_corpus::<f64>(2, 2, 0.05, 16_000, 6).unwrap();
        assert_eq!(a, b);
        assert!(a
            .iter()
            .zip(&c)
            .any(|(x, y)| x.waveform.samples() != y.waveform.samples()));
    }

    #[test]
    fn samples_stay_in_range() {
        let c = synth_corpus::<f64>(3, 2, 0.1, 16_000, 1).unwrap();
        for u in &c {
            assert!(u.waveform.samples().iter().all(|x| x.abs() < 1.0));
        }
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(synth_corpus::<f64>(0, 1, 0.1, 16_000, 0).is_err());
        assert!(synth_corpus::<f64>(1, 0, 0.1, 16_000, 0).is_err());
    }
}
