use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{wav, Utterance};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One manifest line. Audio is read on demand by [`UtteranceDescriptor::load`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceDescriptor {
    pub id: String,
    pub audio_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
}

impl UtteranceDescriptor {
    /// Reads the audio. Relative paths resolve against `base`.
    pub fn load<S: Scalar>(&self, base: &Path) -> Result<Utterance<S>> {
        let path = if self.audio_path.is_absolute() {
            self.audio_path.clone()
        } else {
            base.join(&self.audio_path)
        };
        Ok(Utterance {
            id: self.id.clone(),
            waveform: wav::read(&path)?,
            speaker: self.speaker.clone(),
        })
    }
}

/// Parses a JSON Lines manifest. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn load_manifest(path: &Path) -> Result<Vec<UtteranceDescriptor>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let d: UtteranceDescriptor =
            serde_json::from_str(line).map_err(|e| Error::Manifest {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("malformed entry: {e}"),
            })?;
        if !seen.insert(d.id.clone()) {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("duplicate id {:?}", d.id),
            });
        }
        out.push(d);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[UtteranceDescriptor]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for d in entries {
        let line = serde_json::to_string(d)?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("m.jsonl");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn empty_file_gives_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_manifest(&write(dir.path(), "")).unwrap().is_empty());
    }

    #[test]
    fn lines_kept_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "{\"id\":\"b\",\"audio_path\":\"b.wav\"}\n{\"id\":\"a\",\"audio_path\":\"a.wav\",\"speaker\":\"s1\"}\n",
        );
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].id, "b");
        assert_eq!(m[1].speaker.as_deref(), Some("s1"));
    }

    #[test]
    fn duplicate_id_names_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "{\"id\":\"a\",\"audio_path\":\"a.wav\"}\n{\"id\":\"b\",\"audio_path\":\"b.wav\"}\n{\"id\":\"a\",\"audio_path\":\"c.wav\"}\n",
        );
        match load_manifest(&p).unwrap_err() {
            Error::Manifest { line, msg, .. } => {
                assert_eq!(line, 3);
                assert!(msg.contains("duplicate"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "{\"id\":\"a\",\"audio_path\":\"a.wav\"}\n{oops\n");
        let err = load_manifest(&p).unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 2, .. }), "{err}");
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(load_manifest(Path::new("/definitely/not/here.jsonl")).is_err());
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![
            UtteranceDescriptor {
                id: "x".into(),
                audio_path: "x.wav".into(),
                speaker: Some("spk0".into()),
            },
            UtteranceDescriptor {
                id: "y".into(),
                audio_path: "/abs/y.wav".into(),
                speaker: None,
            },
        ];
        let p = dir.path().join("m.jsonl");
        write_manifest(&p, &entries).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), entries);
    }
}
