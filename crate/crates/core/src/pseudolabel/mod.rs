//! Frame-level pseudo-labels from offline k-means.

mod io;
mod kmeans;
mod recluster;

pub use io::{read_kmeans, read_labels, write_kmeans, write_labels};
pub use kmeans::{assign, fit, kmeans_fit, pool_frames, KmeansModel, KmeansOptions};
pub use recluster::recluster_from_embeddings;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dsp::Provenance;
use crate::error::{Error, Result};

/// Where a label sequence's clustering input came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelSource {
    Mfcc,
    Embedding { layer: usize },
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelSource::Mfcc => f.write_str("mfcc"),
            LabelSource::Embedding { layer } => write!(f, "embedding:layer{layer}"),
        }
    }
}

impl FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "mfcc" {
            return Ok(LabelSource::Mfcc);
        }
        s.strip_prefix("embedding:layer")
            .and_then(|n| n.parse().ok())
            .map(|layer| LabelSource::Embedding { layer })
            .ok_or_else(|| Error::invalid(format!("unknown label source {s:?}")))
    }
}

impl Serialize for LabelSource {
    fn serialize<Ser: Serializer>(&self, s: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LabelSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-frame cluster indices for one utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoLabelSequence {
    pub id: String,
    pub k: usize,
    pub source: LabelSource,
    pub labels: Vec<usize>,
    #[serde(skip)]
    pub provenance: Provenance,
}

impl PseudoLabelSequence {
    pub fn new(
        id: impl Into<String>,
        labels: Vec<usize>,
        k: usize,
        source: LabelSource,
    ) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&z| z >= k) {
            return Err(Error::invalid(format!("label {bad} out of range for k={k}")));
        }
        Ok(PseudoLabelSequence {
            id: id.into(),
            k,
            source,
            labels,
            provenance: Provenance::Clean,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn truncate(&mut self, t: usize) {
        self.labels.truncate(t);
    }

    /// Frames `[start, start + len)`, clipped to the sequence.
    pub fn window(&self, start: usize, len: usize) -> PseudoLabelSequence {
        let start = start.min(self.labels.len());
        let end = (start + len).min(self.labels.len());
        PseudoLabelSequence {
            labels: self.labels[start..end].to_vec(),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_string_forms() {
        assert_eq!(LabelSource::Mfcc.to_string(), "mfcc");
        let e = LabelSource::Embedding { layer: 6 };
        assert_eq!(e.to_string(), "embedding:layer6");
        assert_eq!("embedding:layer6".parse::<LabelSource>().unwrap(), e);
        assert!("embedding:".parse::<LabelSource>().is_err());
    }

    #[test]
    fn label_range_checked() {
        assert!(PseudoLabelSequence::new("u", vec![0, 4], 4, LabelSource::Mfcc).is_err());
    }
}
