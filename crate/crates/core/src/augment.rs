//! Utterance mixing: overlay a cropped chunk of a batch member onto a
//! random region covering at most half of a target utterance.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Batch;
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scalar::Scalar;

/// How the mixed-in chunk is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GainPolicy {
    Fixed { gain: f64 },
    /// Target-to-interference ratio drawn uniformly in dB, relative to the
    /// target region's energy.
    UniformSnr { lo_db: f64, hi_db: f64 },
}

impl Default for GainPolicy {
    fn default() -> Self {
        GainPolicy::UniformSnr {
            lo_db: -5.0,
            hi_db: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    pub probability: f64,
    pub gain: GainPolicy,
    /// Draw the source from the other batch members only.
    pub exclude_self: bool,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            probability: 0.2,
            gain: GainPolicy::default(),
            exclude_self: false,
        }
    }
}

/// Mixing ratios exposed by the sweep command.
pub const SWEEP_PROBABILITIES: [f64; 3] = [0.0, 0.2, 0.5];

/// One overlay. `target_index`/`source_index` are 0-based batch positions;
/// `s` and `s_b` are 1-based sample positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub target_index: usize,
    pub source_index: usize,
    pub l: usize,
    pub s: usize,
    pub s_b: usize,
    pub gain: f64,
}

impl MixSpec {
    /// 0-based sample range overwritten in the target.
    pub fn target_range(&self) -> std::ops::Range<usize> {
        self.s - 1..self.s - 1 + self.l
    }

    pub fn source_range(&self) -> std::ops::Range<usize> {
        self.s_b - 1..self.s_b - 1 + self.l
    }

    /// Problems with this spec for batch size `b` and length `len`.
    fn violations(&self, b: usize, len: usize) -> Vec<String> {
        let mut v = Vec::new();
        if self.target_index >= b || self.source_index >= b {
            v.push(format!("batch index out of range for B={b}"));
        }
        if self.l < 1 || self.l > len / 2 {
            v.push(format!("mix length l={} outside 1..={}", self.l, len / 2));
        }
        let max_start = len.saturating_sub(self.l);
        if self.s < 1 || self.s > max_start {
            v.push(format!("s={} outside 1..={max_start}", self.s));
        }
        if self.s_b < 1 || self.s_b > max_start {
            v.push(format!("s_b={} outside 1..={max_start}", self.s_b));
        }
        if !self.gain.is_finite() {
            v.push("non-finite gain".into());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch<S> {
    pub batch: Batch<S>,
    pub specs: Vec<MixSpec>,
    pub clean: Batch<S>,
    /// Post-mix samples with magnitude above 1.
    pub clipped_samples: usize,
}

impl<S: Scalar> MixedBatch<S> {
    pub fn is_mixed(&self, index: usize) -> bool {
        self.specs.iter().any(|s| s.target_index == index)
    }
}

fn energy<S: Scalar>(x: &[S]) -> f64 {
    x.iter().map(|v| v.as_f64() * v.as_f64()).sum()
}

fn apply<S: Scalar>(target: &mut [S], clean_target: &[S], source: &[S], spec: &MixSpec) {
    let g = S::of(spec.gain);
    for ((y, &x), &z) in target[spec.target_range()]
        .iter_mut()
        .zip(&clean_target[spec.target_range()])
        .zip(&source[spec.source_range()])
    {
        *y = x + g * z;
    }
}

/// Algorithm: Bernoulli(p) selection over the batch, then per selected
/// utterance draw the source, length, both starts and the gain, in that
/// order, from one seeded stream. Sources are always read from the clean
/// batch.
pub fn mix_batch<S: Scalar>(batch: &Batch<S>, cfg: &MixConfig, seed: u64) -> Result<MixedBatch<S>> {
    if !(0.0..=1.0).contains(&cfg.probability) {
        return Err(Error::invalid(format!(
            "mixing probability {} outside [0, 1]",
            cfg.probability
        )));
    }
    if let GainPolicy::UniformSnr { lo_db, hi_db } = cfg.gain {
        if !(lo_db <= hi_db) {
            return Err(Error::invalid("snr range must satisfy lo <= hi"));
        }
    }
    let b = batch.size();
    let len = batch.length();
    let half = len / 2;
    let mut rng = rng_from(seed, &[]);
    let selected: Vec<usize> = (0..b).filter(|_| rng.gen_bool(cfg.probability)).collect();

    let mut mixed = batch.clone();
    let mut specs = Vec::with_capacity(selected.len());
    if half == 0 {
        return Ok(MixedBatch {
            batch: mixed,
            specs,
            clean: batch.clone(),
            clipped_samples: 0,
        });
    }
    let clean = batch.utterances();
    for &target in &selected {
        let source = if cfg.exclude_self && b > 1 {
            let r = rng.gen_range(0..b - 1);
            if r >= target {
                r + 1
            } else {
                r
            }
        } else {
            rng.gen_range(0..b)
        };
        let l = rng.gen_range(1..=half);
        let s = rng.gen_range(1..=len - l);
        let s_b = rng.gen_range(1..=len - l);
        let tgt = clean[target].waveform.samples();
        let src = clean[source].waveform.samples();
        let gain = match cfg.gain {
            GainPolicy::Fixed { gain } => gain,
            GainPolicy::UniformSnr { lo_db, hi_db } => {
                let snr = if lo_db < hi_db {
                    rng.gen_range(lo_db..=hi_db)
                } else {
                    lo_db
                };
                let et = energy(&tgt[s - 1..s - 1 + l]);
                let es = energy(&src[s_b - 1..s_b - 1 + l]);
                if et > 0.0 && es > 0.0 {
                    (et / (es * 10f64.powf(snr / 10.0))).sqrt()
                } else {
                    1.0
                }
            }
        };
        let spec = MixSpec {
            target_index: target,
            source_index: source,
            l,
            s,
            s_b,
            gain,
        };
        apply(
            mixed.utterances_mut()[target].waveform.samples_mut(),
            tgt,
            src,
            &spec,
        );
        specs.push(spec);
    }
    let clipped_samples = mixed
        .utterances()
        .iter()
        .flat_map(|u| u.waveform.samples())
        .filter(|x| x.abs() > S::one())
        .count();
    if clipped_samples > 0 {
        log::debug!("utterance mixing: {clipped_samples} samples exceed unit magnitude");
    }
    Ok(MixedBatch {
        batch: mixed,
        specs,
        clean: batch.clone(),
        clipped_samples,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MixReport {
    pub checked_specs: usize,
    pub violations: Vec<String>,
}

impl MixReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Re-derives the mixed batch from the clean batch and the specs and checks
/// bit equality plus every spec bound.
pub fn verify_spec<S: Scalar>(mixed: &MixedBatch<S>) -> MixReport {
    let mut report = MixReport {
        checked_specs: mixed.specs.len(),
        violations: Vec::new(),
    };
    let b = mixed.clean.size();
    let len = mixed.clean.length();
    if mixed.batch.size() != b || mixed.batch.length() != len {
        report
            .violations
            .push("mixed and clean batch shapes differ".into());
        return report;
    }
    if mixed.batch.ids() != mixed.clean.ids() {
        report.violations.push("mixed and clean ids differ".into());
    }
    let mut seen = vec![false; b];
    let mut expected: Vec<Vec<S>> = mixed
        .clean
        .utterances()
        .iter()
        .map(|u| u.waveform.samples().to_vec())
        .collect();
    let mut valid = true;
    for (i, spec) in mixed.specs.iter().enumerate() {
        let v = spec.violations(b, len);
        if !v.is_empty() {
            valid = false;
            for msg in v {
                report.violations.push(format!("spec {i}: {msg}"));
            }
            continue;
        }
        if std::mem::replace(&mut seen[spec.target_index], true) {
            report.violations.push(format!(
                "spec {i}: utterance {} mixed more than once",
                spec.target_index
            ));
        }
        let clean = mixed.clean.utterances();
        apply(
            &mut expected[spec.target_index],
            clean[spec.target_index].waveform.samples(),
            clean[spec.source_index].waveform.samples(),
            spec,
        );
    }
    if !valid {
        return report;
    }
    for (idx, (want, got)) in expected.iter().zip(mixed.batch.utterances()).enumerate() {
        let got = got.waveform.samples();
        if let Some(t) = want
            .iter()
            .zip(got)
            .position(|(a, b)| a.to_f64().map(f64::to_bits) != b.to_f64().map(f64::to_bits))
        {
            let owner = mixed
                .specs
                .iter()
                .position(|s| s.target_index == idx)
                .map_or("no spec".to_string(), |i| format!("spec {i}"));
            report.violations.push(format!(
                "utterance {idx} sample {t} differs from reconstruction ({owner})"
            ));
        }
    }
    report
}

#[derive(Serialize, Deserialize)]
struct SpecRecord<'a> {
    batch_index: usize,
    specs: std::borrow::Cow<'a, [MixSpec]>,
}

/// Appends one JSON Lines record for a batch's specs.
pub fn append_specs(path: &Path, batch_index: usize, specs: &[MixSpec]) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(&SpecRecord {
        batch_index,
        specs: specs.into(),
    })?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

pub fn read_specs(path: &Path) -> Result<Vec<(usize, Vec<MixSpec>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let r: SpecRecord = serde_json::from_str(l)?;
            Ok((r.batch_index, r.specs.into_owned()))
        })
        .collect()
}
