use std::f64::consts::PI;

use ndarray::{Array1, Array2, Axis};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::FeatureSequence;
use crate::corpus::Waveform;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    pub window: usize,
    pub hop: usize,
    pub num_mel: usize,
    pub num_ceps: usize,
    pub fft_size: usize,
    pub preemphasis: f64,
    pub floor: f64,
    pub deltas: bool,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            window: 400,
            hop: 160,
            num_mel: 26,
            num_ceps: 13,
            fft_size: 512,
            preemphasis: 0.97,
            floor: 1e-10,
            deltas: true,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window > self.fft_size {
            return Err(Error::invalid("mfcc window must be in 1..=fft_size"));
        }
        if self.hop == 0 {
            return Err(Error::invalid("mfcc hop must be >= 1"));
        }
        if self.num_ceps == 0 || self.num_ceps > self.num_mel {
            return Err(Error::invalid("num_ceps must be in 1..=num_mel"));
        }
        if !(self.floor > 0.0) {
            return Err(Error::invalid("log floor must be positive"));
        }
        Ok(())
    }

    /// Output dimensionality D.
    pub fn dim(&self) -> usize {
        if self.deltas {
            3 * self.num_ceps
        } else {
            self.num_ceps
        }
    }

    pub fn frame_rate(&self, sample_rate: u32) -> f64 {
        f64::from(sample_rate) / self.hop as f64
    }
}

/// T = 1 + floor((N - window) / hop), or 0 when N < window.
pub fn frame_count(num_samples: usize, window: usize, hop: usize) -> usize {
    if num_samples < window {
        0
    } else {
        1 + (num_samples - window) / hop
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Edges of the `num_mel` triangular filters, equally spaced on the mel
/// scale between 0 and Nyquist: `num_mel + 2` frequencies in Hz.
fn mel_edges(num_mel: usize, sample_rate: u32) -> Vec<f64> {
    let top = hz_to_mel(f64::from(sample_rate) / 2.0);
    (0..num_mel + 2)
        .map(|i| mel_to_hz(top * i as f64 / (num_mel + 1) as f64))
        .collect()
}

/// Center frequency (Hz) of every mel band.
pub fn mel_center_frequencies(num_mel: usize, sample_rate: u32) -> Vec<f64> {
    mel_edges(num_mel, sample_rate)[1..=num_mel].to_vec()
}

/// `num_mel × (fft_size/2 + 1)` triangular weights.
fn filterbank(cfg: &MfccConfig, sample_rate: u32) -> Array2<f64> {
    let bins = cfg.fft_size / 2 + 1;
    let edges = mel_edges(cfg.num_mel, sample_rate);
    let bin_hz = f64::from(sample_rate) / cfg.fft_size as f64;
    Array2::from_shape_fn((cfg.num_mel, bins), |(m, k)| {
        let f = k as f64 * bin_hz;
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        if f <= lo || f >= hi {
            0.0
        } else if f <= mid {
            (f - lo) / (mid - lo)
        } else {
            (hi - f) / (hi - mid)
        }
    })
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Log mel energies (pre-DCT), T × num_mel, in f64.
pub fn log_mel<S: Scalar>(waveform: &Waveform<S>, cfg: &MfccConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let x: Vec<f64> = waveform.samples().iter().map(|s| s.as_f64()).collect();
    let t = frame_count(x.len(), cfg.window, cfg.hop);
    if t == 0 {
        return Err(Error::invalid(format!(
            "waveform of {} samples is shorter than one {}-sample window",
            x.len(),
            cfg.window
        )));
    }
    let mut emph = Vec::with_capacity(x.len());
    emph.push(x[0]);
    emph.extend(x.windows(2).map(|w| w[1] - cfg.preemphasis * w[0]));

    let win = hann(cfg.window);
    let fb = filterbank(cfg, waveform.sample_rate());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let bins = cfg.fft_size / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    let mut power = Array1::<f64>::zeros(bins);
    let mut out = Array2::<f64>::zeros((t, cfg.num_mel));
    for (f, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let start = f * cfg.hop;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < cfg.window {
                Complex::new(emph[start + i] * win[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        let energies = fb.dot(&power);
        for (r, e) in row.iter_mut().zip(energies.iter()) {
            *r = e.max(cfg.floor).ln();
        }
    }
    Ok(out)
}

/// Orthonormal DCT-II of `x`, keeping the first `keep` coefficients.
pub fn dct_ii(x: &[f64], keep: usize) -> Vec<f64> {
    let m = x.len() as f64;
    (0..keep)
        .map(|k| {
            let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(n, v)| v * (PI * k as f64 * (n as f64 + 0.5) / m).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Inverse of the orthonormal DCT-II (i.e. DCT-III) for a full coefficient set.
pub fn idct_ii(c: &[f64]) -> Vec<f64> {
    let m = c.len() as f64;
    (0..c.len())
        .map(|n| {
            c.iter()
                .enumerate()
                .map(|(k, v)| {
                    let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
                    scale * v * (PI * k as f64 * (n as f64 + 0.5) / m).cos()
                })
                .sum()
        })
        .collect()
}

/// Symmetric regression deltas with a ±2 frame window; edge frames are
/// replicated.
pub fn deltas(x: &Array2<f64>) -> Array2<f64> {
    let t = x.nrows() as isize;
    let at = |i: isize| x.row(i.clamp(0, t - 1) as usize);
    let mut out = Array2::zeros(x.raw_dim());
    for i in 0..t {
        let mut row = out.row_mut(i as usize);
        for n in 1..=2isize {
            let w = n as f64 / 10.0;
            row.scaled_add(w, &at(i + n));
            row.scaled_add(-w, &at(i - n));
        }
    }
    out
}

/// MFCC (+Δ, ΔΔ) features: preemphasis → Hann → power FFT → HTK mel
/// filterbank → floored log → orthonormal DCT-II.
pub fn mfcc<S: Scalar>(
    id: &str,
    waveform: &Waveform<S>,
    cfg: &MfccConfig,
) -> Result<FeatureSequence<S>> {
    let lm = log_mel(waveform, cfg)?;
    let t = lm.nrows();
    let mut ceps = Array2::<f64>::zeros((t, cfg.num_ceps));
    for (r, mut out) in lm.axis_iter(Axis(0)).zip(ceps.axis_iter_mut(Axis(0))) {
        let c = dct_ii(r.as_slice().expect("row-major"), cfg.num_ceps);
        out.assign(&Array1::from(c));
    }
    let full = if cfg.deltas {
        let d1 = deltas(&ceps);
        let d2 = deltas(&d1);
        ndarray::concatenate(Axis(1), &[ceps.view(), d1.view(), d2.view()])
            .expect("same row count")
    } else {
        ceps
    };
    FeatureSequence::new(
        id,
        full.mapv(S::of),
        cfg.frame_rate(waveform.sample_rate()),
    )
}
