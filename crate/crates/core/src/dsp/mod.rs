//! MFCC front end and per-frame feature containers.

mod dump;
mod mfcc;

pub use dump::{read_features, write_features, FeatureSidecar};
pub use mfcc::{
    dct_ii, deltas, frame_count, hz_to_mel, idct_ii, log_mel, mel_center_frequencies, mel_to_hz,
    mfcc, MfccConfig,
};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pseudolabel::PseudoLabelSequence;
use crate::scalar::Scalar;

/// Whether a feature (and any label derived from it) came from clean or
/// mixed audio. Content targets must always be `Clean`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Clean,
    Mixed,
}

/// T frames of D-dimensional features for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence<S> {
    pub id: String,
    pub frames: Array2<S>,
    pub frame_rate: f64,
    pub provenance: Provenance,
}

impl<S: Scalar> FeatureSequence<S> {
    pub fn new(id: impl Into<String>, frames: Array2<S>, frame_rate: f64) -> Result<Self> {
        if frames.nrows() == 0 {
            return Err(Error::invalid("feature sequence needs at least one frame"));
        }
        if frames.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("feature value".into()));
        }
        Ok(FeatureSequence {
            id: id.into(),
            frames,
            frame_rate,
            provenance: Provenance::Clean,
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn truncate(&mut self, t: usize) {
        if t < self.len() {
            self.frames = self.frames.slice(ndarray::s![..t, ..]).to_owned();
        }
    }
}

/// Largest frame-count difference `frame_labels_align` absorbs.
pub const ALIGN_TOLERANCE: usize = 2;

/// Truncates features and labels to their common length.
pub fn frame_labels_align<S: Scalar>(
    mut features: FeatureSequence<S>,
    mut labels: PseudoLabelSequence,
) -> Result<(FeatureSequence<S>, PseudoLabelSequence)> {
    let (a, b) = (features.len(), labels.len());
    if a.abs_diff(b) > ALIGN_TOLERANCE {
        return Err(Error::DimensionMismatch {
            what: "label frames vs feature frames",
            expected: a,
            got: b,
        });
    }
    let t = a.min(b);
    features.truncate(t);
    labels.truncate(t);
    Ok((features, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseudolabel::LabelSource;

    fn pair(t_feat: usize, t_lab: usize) -> (FeatureSequence<f64>, PseudoLabelSequence) {
        let f = FeatureSequence::new("u", Array2::zeros((t_feat, 3)), 100.0).unwrap();
        let l = PseudoLabelSequence::new("u", vec![0; t_lab], 4, LabelSource::Mfcc).unwrap();
        (f, l)
    }

    #[test]
    fn equal_lengths_unchanged() {
        let (f, l) = pair(100, 100);
        let (f2, l2) = frame_labels_align(f.clone(), l.clone()).unwrap();
        assert_eq!(f2, f);
        assert_eq!(l2, l);
    }

    #[test]
    fn off_by_one_truncates() {
        let (f, l) = pair(100, 101);
        let (f2, l2) = frame_labels_align(f, l).unwrap();
        assert_eq!((f2.len(), l2.len()), (100, 100));
    }

    #[test]
    fn large_mismatch_rejected() {
        let (f, l) = pair(100, 110);
        assert!(frame_labels_align(f, l).is_err());
    }
}
