//! Label dumps (JSON Lines) and k-means model dumps (JSON header line
//! followed by a little-endian f32 center blob).

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{KmeansModel, PseudoLabelSequence};
use crate::dsp::Provenance;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Refuses to persist labels that were derived from mixed audio.
pub fn write_labels(path: &Path, labels: &[PseudoLabelSequence]) -> Result<()> {
    let mut out = Vec::new();
    for l in labels {
        if l.provenance != Provenance::Clean {
            return Err(Error::invalid(format!(
                "labels for {} were derived from mixed audio",
                l.id
            )));
        }
        serde_json::to_writer(&mut out, l)?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<PseudoLabelSequence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let seq: PseudoLabelSequence =
                serde_json::from_str(l).map_err(|e| Error::Manifest {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            PseudoLabelSequence::new(seq.id, seq.labels, seq.k, seq.source).map_err(|e| {
                Error::Manifest {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: e.to_string(),
                }
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase")]
struct KmeansHeader {
    #[serde(rename = "k")]
    k: usize,
    d: usize,
    #[serde(rename = "seed")]
    seed: u64,
    #[serde(rename = "inertia")]
    inertia: f64,
}

pub fn write_kmeans<S: Scalar>(path: &Path, model: &KmeansModel<S>) -> Result<()> {
    let header = KmeansHeader {
        k: model.k(),
        d: model.dim(),
        seed: model.seed,
        inertia: model.inertia.as_f64(),
    };
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    for &c in model.centers.iter() {
        bytes.extend_from_slice(&(c.as_f64() as f32).to_le_bytes());
    }
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_kmeans<S: Scalar>(path: &Path) -> Result<KmeansModel<S>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::invalid("k-means dump has no header line"))?;
    let h: KmeansHeader = serde_json::from_slice(&bytes[..nl])?;
    let blob = &bytes[nl + 1..];
    if blob.len() != h.k * h.d * 4 {
        return Err(Error::DimensionMismatch {
            what: "k-means center blob bytes",
            expected: h.k * h.d * 4,
            got: blob.len(),
        });
    }
    let vals = blob
        .chunks_exact(4)
        .map(|c| S::of(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
        .collect();
    Ok(KmeansModel {
        centers: Array2::from_shape_vec((h.k, h.d), vals).expect("sized above"),
        inertia: S::of(h.inertia),
        iterations_run: 0,
        seed: h.seed,
        history: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseudolabel::LabelSource;
    use ndarray::array;

    #[test]
    fn label_dump_round_trip_and_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.jsonl");
        let seqs = vec![
            PseudoLabelSequence::new("a", vec![0, 1, 1], 2, LabelSource::Mfcc).unwrap(),
            PseudoLabelSequence::new("b", vec![3], 4, LabelSource::Embedding { layer: 2 })
                .unwrap(),
        ];
        write_labels(&p, &seqs).unwrap();
        assert_eq!(read_labels(&p).unwrap(), seqs);
        let first: serde_json::Value =
            serde_json::from_str(fs::read_to_string(&p).unwrap().lines().next().unwrap())
                .unwrap();
        assert_eq!(
            first,
            serde_json::json!({"id": "a", "k": 2, "source": "mfcc", "labels": [0, 1, 1]})
        );
    }

    #[test]
    fn mixed_labels_are_not_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = PseudoLabelSequence::new("a", vec![0], 1, LabelSource::Mfcc).unwrap();
        s.provenance = Provenance::Mixed;
        assert!(write_labels(&dir.path().join("x"), &[s]).is_err());
    }

    #[test]
    fn out_of_range_label_in_dump_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.jsonl");
        fs::write(&p, "{\"id\":\"a\",\"k\":2,\"source\":\"mfcc\",\"labels\":[0,2]}\n").unwrap();
        assert!(read_labels(&p).is_err());
    }

    #[test]
    fn kmeans_dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("km.bin");
        let m = KmeansModel {
            centers: array![[0.5f64, -1.0], [2.0, 0.25]],
            inertia: 3.5,
            iterations_run: 4,
            seed: 9,
            history: vec![],
        };
        write_kmeans(&p, &m).unwrap();
        let back: KmeansModel<f64> = read_kmeans(&p).unwrap();
        assert_eq!(back.centers, m.centers);
        assert_eq!(back.seed, 9);
        assert_eq!(back.inertia, 3.5);
        let bytes = fs::read(&p).unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let h: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
        assert_eq!(h["k"], 2);
        assert_eq!(h["D"], 2);
    }
}
