use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scalar::Scalar;

/// Masked frame indices of one utterance (0-based) and the merged spans
/// that cover them.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MaskSet {
    len: usize,
    indices: Vec<usize>,
    spans: Vec<(usize, usize)>,
}

impl MaskSet {
    /// Union of `[start, start + span)` for every start, clipped to `len`.
    pub fn from_starts(len: usize, starts: &[usize], span: usize) -> Result<Self> {
        let mut starts = starts.to_vec();
        starts.sort_unstable();
        let mut spans: Vec<(usize, usize)> = Vec::new();
        for &s in &starts {
            if s >= len {
                return Err(Error::invalid(format!("span start {s} outside {len} frames")));
            }
            let end = (s + span).min(len);
            match spans.last_mut() {
                Some((ps, pl)) if s <= *ps + *pl => *pl = (*pl).max(end - *ps),
                _ => spans.push((s, end - s)),
            }
        }
        let indices = spans.iter().flat_map(|&(s, l)| s..s + l).collect();
        Ok(MaskSet { len, indices, spans })
    }

    pub fn empty(len: usize) -> Self {
        MaskSet {
            len,
            ..MaskSet::default()
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }

    pub fn count(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, t: usize) -> bool {
        self.indices.binary_search(&t).is_ok()
    }

    pub fn fraction(&self) -> f64 {
        if self.len == 0 {
            0.0
        } else {
            self.indices.len() as f64 / self.len as f64
        }
    }
}

/// Every frame independently starts a span of `span` frames with
/// probability `start_prob`; overlapping spans merge.
pub fn sample_mask(len: usize, span: usize, start_prob: f64, seed: u64) -> Result<MaskSet> {
    if span == 0 {
        return Err(Error::invalid("mask span must be >= 1"));
    }
    if !(0.0..=1.0).contains(&start_prob) {
        return Err(Error::invalid("mask start probability outside [0, 1]"));
    }
    let mut rng = rng_from(seed, &[]);
    let starts: Vec<usize> = (0..len).filter(|_| rng.gen_bool(start_prob)).collect();
    MaskSet::from_starts(len, &starts, span)
}

/// Like [`sample_mask`] but falls back to one uniformly placed span when
/// the draw comes out empty.
pub fn sample_mask_nonempty(len: usize, span: usize, start_prob: f64, seed: u64) -> Result<MaskSet> {
    let m = sample_mask(len, span, start_prob, seed)?;
    if !m.is_empty() || len == 0 {
        return Ok(m);
    }
    let mut rng = rng_from(seed, &[0xFA11]);
    let start = rng.gen_range(0..len);
    MaskSet::from_starts(len, &[start], span)
}

/// `r(X, M)`: masked rows replaced by the mask embedding.
pub fn corrupt<S: Scalar>(x: &Array2<S>, mask: &MaskSet, embedding: &Array1<S>) -> Result<Array2<S>> {
    if embedding.len() != x.ncols() {
        return Err(Error::DimensionMismatch {
            what: "mask embedding dim",
            expected: x.ncols(),
            got: embedding.len(),
        });
    }
    if let Some(&bad) = mask.indices().iter().find(|&&t| t >= x.nrows()) {
        return Err(Error::invalid(format!(
            "mask index {bad} outside {} frames",
            x.nrows()
        )));
    }
    let mut out = x.clone();
    for &t in mask.indices() {
        out.row_mut(t).assign(embedding);
    }
    Ok(out)
}
