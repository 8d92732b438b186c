//! Corpus manifest: UTF-8 CSV with header
//! `utterance_id,audio_path,algorithm_class,speaker_id`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::taxonomy::{AlgorithmClass, GeneratorFamily};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 4] = ["utterance_id", "audio_path", "algorithm_class", "speaker_id"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    /// As written in the manifest; relative paths resolve against the manifest directory.
    pub audio_path: PathBuf,
    pub algorithm_class: AlgorithmClass,
    pub speaker_id: String,
}

impl UtteranceRecord {
    pub fn generator_family(&self) -> GeneratorFamily {
        self.algorithm_class.family()
    }

    pub fn resolve_audio(&self, manifest_dir: &Path) -> PathBuf {
        if self.audio_path.is_absolute() {
            self.audio_path.clone()
        } else {
            manifest_dir.join(&self.audio_path)
        }
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<UtteranceRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

/// Parses manifest text; `origin` only labels error messages.
pub fn parse_manifest(text: &str, origin: &Path) -> Result<Vec<UtteranceRecord>> {
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        reason,
    };
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(parse_err(
            1,
            format!("expected header {:?}, found {:?}", MANIFEST_HEADER.join(","), headers),
        ));
    }

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, found {}", row.len())));
        }
        let utterance_id = row[0].to_string();
        if utterance_id.is_empty() {
            return Err(parse_err(line, "empty utterance_id".into()));
        }
        let algorithm_class: AlgorithmClass = row[2]
            .parse()
            .map_err(|_| parse_err(line, format!("unknown algorithm class {:?}", &row[2])))?;
        if !seen.insert(utterance_id.clone()) {
            return Err(parse_err(line, format!("duplicate utterance_id {utterance_id:?}")));
        }
        out.push(UtteranceRecord {
            utterance_id,
            audio_path: PathBuf::from(&row[1]),
            algorithm_class,
            speaker_id: row[3].to_string(),
        });
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[UtteranceRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(MANIFEST_HEADER).map_err(to_err)?;
    for r in records {
        w.write_record([
            r.utterance_id.as_str(),
            &r.audio_path.to_string_lossy(),
            r.algorithm_class.label(),
            r.speaker_id.as_str(),
        ])
        .map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<UtteranceRecord>> {
        parse_manifest(text, Path::new("m.csv"))
    }

    #[test]
    fn merges_and_rejects_labels() {
        let ok = parse("utterance_id,audio_path,algorithm_class,speaker_id\nu1,a.wav,A16,s1\n").unwrap();
        assert_eq!(ok[0].algorithm_class.label(), "A04/A16");
        let err = parse("utterance_id,audio_path,algorithm_class,speaker_id\nu1,a.wav,A01,s1\nu2,b.wav,A20,s1\n")
            .unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");
    }

    #[test]
    fn empty_and_duplicates() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("utterance_id,audio_path,algorithm_class,speaker_id\n").unwrap().is_empty());
        let err = parse("utterance_id,audio_path,algorithm_class,speaker_id\nu1,a.wav,A01,s\nu1,b.wav,A02,s\n")
            .unwrap_err();
        assert!(err.to_string().contains("duplicate"));
        assert!(parse("id,path,class,speaker\n").is_err());
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let recs = vec![UtteranceRecord {
            utterance_id: "x".into(),
            audio_path: "wav/x.wav".into(),
            algorithm_class: AlgorithmClass::NATURAL,
            speaker_id: "spk00".into(),
        }];
        write_manifest(&path, &recs).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), recs);
    }
}
