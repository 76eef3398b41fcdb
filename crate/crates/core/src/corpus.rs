//! Sentence corpora and checkpoint-series run layouts.
//!
//! A run directory looks like:
//!
//! ```text
//! run/
//!   src.txt
//!   ref.txt
//!   checkpoints/<id>/hyp.txt
//! ```
//!
//! Every file is UTF-8 with one sentence per line. Lines are NFC-normalized and
//! trimmed; tokens are the whitespace-separated words of the result. Empty lines
//! are kept as zero-token sentences so that line `k` of every file stays paired.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const SOURCE_FILE: &str = "src.txt";
pub const REFERENCE_FILE: &str = "ref.txt";
pub const CHECKPOINTS_DIR: &str = "checkpoints";
pub const HYPOTHESIS_FILE: &str = "hyp.txt";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Sentence {
    raw: String,
    tokens: Vec<String>,
}

impl Sentence {
    /// Normalizes `raw` (NFC, trimmed) and splits it on whitespace.
    pub fn new(raw: &str) -> Result<Self> {
        if raw.contains(['\n', '\r']) {
            return Err(Error::Contract(
                "sentence text must not contain line breaks".into(),
            ));
        }
        let normalized: String = raw.nfc().collect();
        let raw = normalized.trim().to_string();
        let tokens = raw.split_whitespace().map(str::to_string).collect();
        Ok(Sentence { raw, tokens })
    }

    /// Builds a sentence from tokens, joined with single spaces.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let joined = tokens
            .iter()
            .map(AsRef::as_ref)
            .collect::<Vec<_>>()
            .join(" ");
        Sentence::new(&joined)
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    name: String,
    sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, sentences: Vec<Sentence>) -> Self {
        Corpus {
            name: name.into(),
            sentences,
        }
    }

    pub fn from_lines<I, S>(name: impl Into<String>, lines: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let sentences = lines
            .into_iter()
            .map(|l| Sentence::new(l.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus::new(name, sentences))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sentence> {
        self.sentences.iter()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// One line per sentence, each terminated by `\n`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            out.push_str(s.raw());
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Sentence;
    type IntoIter = std::slice::Iter<'a, Sentence>;

    fn into_iter(self) -> Self::IntoIter {
        self.sentences.iter()
    }
}

pub fn load_corpus(path: impl AsRef<Path>, name: &str) -> Result<Corpus> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&bytes, path, name)
}

/// Parses corpus bytes; `origin` is only used in error messages.
pub fn parse_corpus(bytes: &[u8], origin: &Path, name: &str) -> Result<Corpus> {
    let mut sentences = Vec::new();
    if bytes.is_empty() {
        return Ok(Corpus::new(name, sentences));
    }
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    for (idx, line) in body.split(|&b| b == b'\n').enumerate() {
        let line = std::str::from_utf8(line).map_err(|_| Error::Decode {
            path: origin.to_path_buf(),
            line: idx + 1,
        })?;
        let line = line.strip_suffix('\r').unwrap_or(line);
        sentences.push(Sentence::new(line)?);
    }
    Ok(Corpus::new(name, sentences))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointRun {
    pub checkpoint_id: String,
    pub hypotheses: Corpus,
}

#[derive(Debug, Clone)]
pub struct AnalysisRun {
    source: Corpus,
    reference: Corpus,
    checkpoints: Vec<CheckpointRun>,
}

impl AnalysisRun {
    /// Sorts checkpoints by id and validates that every corpus has the same length.
    pub fn new(
        source: Corpus,
        reference: Corpus,
        mut checkpoints: Vec<CheckpointRun>,
    ) -> Result<Self> {
        if reference.len() != source.len() {
            return Err(Error::LengthMismatch {
                context: format!("reference corpus '{}'", reference.name()),
                expected: source.len(),
                found: reference.len(),
            });
        }
        sort_checkpoints(&mut checkpoints)?;
        for ck in &checkpoints {
            if ck.hypotheses.len() != source.len() {
                return Err(Error::LengthMismatch {
                    context: format!("checkpoint '{}'", ck.checkpoint_id),
                    expected: source.len(),
                    found: ck.hypotheses.len(),
                });
            }
        }
        Ok(AnalysisRun {
            source,
            reference,
            checkpoints,
        })
    }

    pub fn source(&self) -> &Corpus {
        &self.source
    }

    pub fn reference(&self) -> &Corpus {
        &self.reference
    }

    pub fn checkpoints(&self) -> &[CheckpointRun] {
        &self.checkpoints
    }

    pub fn checkpoint_ids(&self) -> Vec<&str> {
        self.checkpoints
            .iter()
            .map(|c| c.checkpoint_id.as_str())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }
}

fn sort_checkpoints(checkpoints: &mut [CheckpointRun]) -> Result<()> {
    checkpoints.sort_by(|a, b| a.checkpoint_id.cmp(&b.checkpoint_id));
    for pair in checkpoints.windows(2) {
        if pair[0].checkpoint_id == pair[1].checkpoint_id {
            return Err(Error::Contract(format!(
                "duplicate checkpoint id '{}'",
                pair[0].checkpoint_id
            )));
        }
    }
    Ok(())
}

pub fn load_run(dir: impl AsRef<Path>) -> Result<AnalysisRun> {
    let dir = dir.as_ref();
    let source = load_corpus(dir.join(SOURCE_FILE), "source")?;
    let reference = load_corpus(dir.join(REFERENCE_FILE), "reference")?;
    let checkpoints = load_checkpoints(dir)?;
    AnalysisRun::new(source, reference, checkpoints)
}

/// Reads `dir/checkpoints/<id>/hyp.txt` for every checkpoint subdirectory, sorted by id.
pub fn load_checkpoints(dir: impl AsRef<Path>) -> Result<Vec<CheckpointRun>> {
    let mut checkpoints = Vec::new();
    for (id, ck_dir) in checkpoint_dirs(dir.as_ref())? {
        let hypotheses = load_corpus(ck_dir.join(HYPOTHESIS_FILE), &id)?;
        checkpoints.push(CheckpointRun {
            checkpoint_id: id,
            hypotheses,
        });
    }
    sort_checkpoints(&mut checkpoints)?;
    Ok(checkpoints)
}

/// Lists `(id, path)` for each subdirectory of `dir/checkpoints`, sorted by id.
pub fn checkpoint_dirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let root = dir.join(CHECKPOINTS_DIR);
    let entries = fs::read_dir(&root).map_err(|e| Error::io(&root, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&root, e))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let id = entry.file_name().into_string().map_err(|_| {
            Error::Contract(format!("non-UTF-8 checkpoint id under {}", root.display()))
        })?;
        out.push((id, path));
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &[u8]) -> Result<Corpus> {
        parse_corpus(text, Path::new("mem"), "t")
    }

    #[test]
    fn single_line() {
        let c = parse(b"a b\n").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.sentences()[0].tokens(), ["a", "b"]);
    }

    #[test]
    fn empty_file_has_no_sentences() {
        assert!(parse(b"").unwrap().is_empty());
    }

    #[test]
    fn blank_lines_are_kept() {
        let c = parse(b"x\n\ny\n").unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.sentences()[1].is_empty());
        assert_eq!(c.sentences()[2].tokens(), ["y"]);
    }

    #[test]
    fn missing_final_newline() {
        let c = parse(b"x\ny").unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn invalid_utf8_reports_line() {
        let err = parse(b"ok\n\xff\xfe\n").unwrap_err();
        assert!(matches!(err, Error::Decode { line: 2, .. }), "{err}");
    }

    #[test]
    fn nfc_and_trim() {
        // "e" + combining acute composes to a single code point.
        let s = Sentence::new("  cafe\u{301}  noir\t").unwrap();
        assert_eq!(s.raw(), "caf\u{e9}  noir");
        assert_eq!(s.tokens(), ["caf\u{e9}", "noir"]);
    }

    #[test]
    fn newline_rejected() {
        assert!(Sentence::new("a\nb").is_err());
    }

    #[test]
    fn run_length_mismatch_names_checkpoint() {
        let src = Corpus::from_lines("s", ["a", "b", "c"]).unwrap();
        let reference = src.clone();
        let ck = CheckpointRun {
            checkpoint_id: "000100".into(),
            hypotheses: Corpus::from_lines("h", ["a", "b"]).unwrap(),
        };
        let err = AnalysisRun::new(src, reference, vec![ck]).unwrap_err();
        match err {
            Error::LengthMismatch {
                context,
                expected,
                found,
            } => {
                assert!(context.contains("000100"));
                assert_eq!((expected, found), (3, 2));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let c = Corpus::from_lines("s", ["a"]).unwrap();
        let ck = CheckpointRun {
            checkpoint_id: "1".into(),
            hypotheses: c.clone(),
        };
        assert!(AnalysisRun::new(c.clone(), c, vec![ck.clone(), ck]).is_err());
    }

    proptest! {
        #[test]
        fn serialization_reloads_equal(lines in proptest::collection::vec("[ a-zé\t]{0,12}", 0..8)) {
            let c = Corpus::from_lines("t", &lines).unwrap();
            let again = parse(c.to_text().as_bytes()).unwrap();
            prop_assert_eq!(c, again);
        }

        #[test]
        fn token_count_matches_nonspace_runs(line in "[ ab\t]{0,20}") {
            let s = Sentence::new(&line).unwrap();
            let mut runs = 0;
            let mut prev_space = true;
            for ch in s.raw().chars() {
                let space = ch.is_whitespace();
                if !space && prev_space {
                    runs += 1;
                }
                prev_space = space;
            }
            prop_assert_eq!(s.len(), runs);
        }
    }
}
