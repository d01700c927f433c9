//! Corpus files are UTF-8, one sentence per line, LF endings only. Violations
//! are hard errors with a location rather than silent mangling.

use std::path::Path;

use super::CorpusError;

pub(crate) fn read_to_string(path: &Path) -> Result<String, CorpusError> {
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    String::from_utf8(bytes).map_err(|e| CorpusError::Utf8 {
        path: path.display().to_string(),
        offset: e.utf8_error().valid_up_to(),
    })
}

/// Read sentences, skipping empty lines. CR anywhere is rejected.
pub fn read_corpus_file(path: &Path) -> Result<Vec<String>, CorpusError> {
    let text = read_to_string(path)?;
    let mut lines = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        if line.contains('\r') {
            return Err(CorpusError::CrLf {
                path: path.display().to_string(),
                line: i + 1,
            });
        }
        if !line.is_empty() {
            lines.push(line.to_string());
        }
    }
    Ok(lines)
}

/// Write one sentence per line with a trailing LF.
pub fn write_corpus_file(path: &Path, lines: &[String]) -> Result<(), CorpusError> {
    let mut out = String::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
    for line in lines {
        out.push_str(line);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("corpus-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_preserves_lines() {
        let path = tmp("ok.txt");
        let lines = vec!["你好".to_string(), "世界".to_string()];
        write_corpus_file(&path, &lines).unwrap();
        assert_eq!(read_corpus_file(&path).unwrap(), lines);
    }

    #[test]
    fn rejects_crlf_with_line_number() {
        let path = tmp("crlf.txt");
        std::fs::write(&path, "ok\nbad\r\n").unwrap();
        let err = read_corpus_file(&path).unwrap_err();
        assert!(matches!(err, CorpusError::CrLf { line: 2, .. }), "{err}");
    }

    #[test]
    fn rejects_invalid_utf8_with_offset() {
        let path = tmp("bin.txt");
        std::fs::write(&path, [0x61, 0xFF, 0x62]).unwrap();
        let err = read_corpus_file(&path).unwrap_err();
        assert!(matches!(err, CorpusError::Utf8 { offset: 1, .. }), "{err}");
    }

    #[test]
    fn skips_empty_lines() {
        let path = tmp("gaps.txt");
        std::fs::write(&path, "a\n\nb\n").unwrap();
        assert_eq!(read_corpus_file(&path).unwrap(), vec!["a", "b"]);
    }
}
