//! Pharaoh text format: one sentence per line, `i-j` pairs with 0-based
//! source and target word indices.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{AlignError, SentenceAlignment};

/// Parses one line into 1-based links. `line_no` is used for errors.
pub fn parse_pharaoh_line(line: &str, line_no: usize) -> Result<Vec<(u32, u32)>, AlignError> {
    let mut links = Vec::new();
    let mut column = 1;
    for piece in line.split(' ') {
        if !piece.is_empty() {
            let malformed = || AlignError::Parse {
                line: line_no,
                column,
                token: piece.to_string(),
            };
            let (i, j) = piece.split_once('-').ok_or_else(malformed)?;
            let i: u32 = i.parse().map_err(|_| malformed())?;
            let j: u32 = j.parse().map_err(|_| malformed())?;
            if i == u32::MAX || j == u32::MAX {
                return Err(malformed());
            }
            links.push((i + 1, j + 1));
        }
        column += piece.chars().count() + 1;
    }
    Ok(links)
}

pub fn format_pharaoh_line(alignment: &SentenceAlignment) -> String {
    let mut out = String::new();
    for (k, &(i, j)) in alignment.links.iter().enumerate() {
        if k > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{}-{}", i - 1, j - 1);
    }
    out
}

/// Streams alignments from Pharaoh text.
///
/// Sentence lengths are not part of the format; each alignment reports the
/// smallest lengths that contain its links.
pub struct PharaohReader<R> {
    inner: R,
    buf: String,
    line_no: usize,
}

impl<R: BufRead> PharaohReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            buf: String::new(),
            line_no: 0,
        }
    }
}

impl<R: BufRead> Iterator for PharaohReader<R> {
    type Item = Result<SentenceAlignment, AlignError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.buf.clear();
        match self.inner.read_line(&mut self.buf) {
            Ok(0) => None,
            Ok(_) => {
                let ordinal = self.line_no;
                self.line_no += 1;
                let line = self.buf.trim_end_matches(['\n', '\r']);
                Some(parse_pharaoh_line(line, self.line_no).map(|links| {
                    let src = links.iter().map(|l| l.0).max().unwrap_or(0) as usize;
                    let tgt = links.iter().map(|l| l.1).max().unwrap_or(0) as usize;
                    SentenceAlignment::new(ordinal, src, tgt, links)
                }))
            }
            Err(e) => Some(Err(AlignError::Io {
                path: "<alignment stream>".into(),
                source: e,
            })),
        }
    }
}

pub fn import_alignments(path: &Path) -> Result<Vec<SentenceAlignment>, AlignError> {
    let file = File::open(path).map_err(|source| AlignError::Io {
        path: path.to_owned(),
        source,
    })?;
    PharaohReader::new(BufReader::new(file)).collect()
}

pub fn export_pharaoh(path: &Path, alignments: &[SentenceAlignment]) -> Result<(), AlignError> {
    let mut text = String::new();
    for a in alignments {
        text.push_str(&format_pharaoh_line(a));
        text.push('\n');
    }
    crate::write_atomic(path, text.as_bytes()).map_err(|source| AlignError::Io {
        path: path.to_owned(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_based_to_one_based() {
        assert_eq!(parse_pharaoh_line("0-0 1-2", 1).unwrap(), vec![(1, 1), (2, 3)]);
        assert!(parse_pharaoh_line("", 1).unwrap().is_empty());
    }

    #[test]
    fn malformed_token_reports_position() {
        match parse_pharaoh_line("0-0 3-", 4) {
            Err(AlignError::Parse { line, column, token }) => {
                assert_eq!((line, column, token.as_str()), (4, 5, "3-"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(parse_pharaoh_line("a-1", 1).is_err());
        assert!(parse_pharaoh_line("1", 1).is_err());
        assert!(parse_pharaoh_line("-1-2", 1).is_err());
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        let alignments = vec![
            SentenceAlignment::new(0, 2, 3, vec![(1, 1), (2, 3)]),
            SentenceAlignment::new(1, 0, 0, vec![]),
            SentenceAlignment::new(2, 1, 2, vec![(1, 2)]),
        ];
        export_pharaoh(&path, &alignments).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "0-0 1-2\n\n0-1\n");
        let back = import_alignments(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in alignments.iter().zip(&back) {
            assert_eq!(a.links, b.links);
            assert_eq!(a.ordinal, b.ordinal);
        }
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            import_alignments(Path::new("/nonexistent/align.txt")),
            Err(AlignError::Io { .. })
        ));
    }
}
