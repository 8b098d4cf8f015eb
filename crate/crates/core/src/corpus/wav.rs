//! RIFF/PCM16 mono WAV reading and writing.

use std::fs;
use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const PCM: u16 = 1;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes a 16-bit PCM mono WAV image. Stereo and other sample formats are
/// rejected.
pub fn decode<S: Scalar>(bytes: &[u8]) -> Result<Waveform<S>> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Wav("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Wav("truncated chunk".into()))?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Wav("fmt chunk too short".into()));
                }
                fmt = Some((
                    u16_at(bytes, body),
                    u16_at(bytes, body + 2),
                    u32_at(bytes, body + 4),
                    u16_at(bytes, body + 14),
                ));
            }
            b"data" => {
                let (format, channels, rate, bits) =
                    fmt.ok_or_else(|| Error::Wav("data chunk before fmt chunk".into()))?;
                if format != PCM || bits != 16 {
                    return Err(Error::Wav(format!(
                        "unsupported encoding (format {format}, {bits} bits); expected PCM16"
                    )));
                }
                if channels != 1 {
                    return Err(Error::Wav(format!(
                        "{channels} channels; only mono audio is accepted"
                    )));
                }
                let scale = S::of(1.0 / 32768.0);
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|c| S::of(f64::from(i16::from_le_bytes([c[0], c[1]]))) * scale)
                    .collect();
                return Waveform::new(samples, rate);
            }
            _ => {}
        }
        // chunks are word aligned
        pos = end + (size & 1);
    }
    Err(Error::Wav("no data chunk".into()))
}

/// Encodes as PCM16 mono; samples are clamped to [-1, 1).
pub fn encode<S: Scalar>(wave: &Waveform<S>) -> Vec<u8> {
    let data_len = wave.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&wave.sample_rate().to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &x in wave.samples() {
        let v = (x.as_f64() * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read<S: Scalar>(path: &Path) -> Result<Waveform<S>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Wav(m) => Error::Wav(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write<S: Scalar>(path: &Path, wave: &Waveform<S>) -> Result<()> {
    fs::write(path, encode(wave)).map_err(|e| Error::io(path, e))
}
