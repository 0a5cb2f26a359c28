//! Streaming readers and writers for parallel-text containers.
//!
//! Three container formats are supported:
//!
//! * `moses-pair`: two UTF-8 files aligned by line number.
//! * `tsv`: `src<TAB>tgt[<TAB>origin]`, no quoting. Tabs and newlines inside
//!   a sentence cannot be represented and are rejected on write.
//! * `jsonl`: one `{"src","tgt","origin","scores"}` object per line.
//!
//! Only the trailing `\n` of a line is stripped; every other byte, `\r`
//! included, is passed through untouched so that write-then-read is the
//! identity on texts.

mod manifest;

pub use manifest::{load_manifest, parse_manifest, DatasetManifestEntry, ManifestError};

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{PairId, SentencePair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Format {
    #[serde(rename = "moses-pair")]
    MosesPair,
    #[serde(rename = "tsv")]
    Tsv,
    #[serde(rename = "jsonl")]
    Jsonl,
}

impl Format {
    pub fn path_count(self) -> usize {
        match self {
            Format::MosesPair => 2,
            Format::Tsv | Format::Jsonl => 1,
        }
    }

    /// Guesses a single-file format from the extension.
    pub fn from_extension(path: &Path) -> Option<Format> {
        match path.extension()?.to_str()? {
            "tsv" => Some(Format::Tsv),
            "jsonl" | "json" => Some(Format::Jsonl),
            _ => None,
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::MosesPair => "moses-pair",
            Format::Tsv => "tsv",
            Format::Jsonl => "jsonl",
        })
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "moses-pair" | "moses" => Ok(Format::MosesPair),
            "tsv" => Ok(Format::Tsv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(format!("unknown format `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{format} needs {expected} path(s), got {got}")]
    PathCount { format: Format, expected: usize, got: usize },
    #[error("line count mismatch {src_lines} vs {tgt_lines}")]
    LineCountMismatch { src_lines: u64, tgt_lines: u64 },
    #[error("{path}: invalid UTF-8 at byte offset {offset} (line {line})")]
    InvalidUtf8 { path: PathBuf, line: u64, offset: u64 },
    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow { path: PathBuf, line: u64, reason: String },
    #[error("{origin}: expected {expected} pairs, parsed {parsed}")]
    CountMismatch { origin: String, expected: u64, parsed: u64 },
}

impl IngestError {
    /// Row-level errors skip one row; the reader keeps going afterwards.
    pub fn is_row_error(&self) -> bool {
        matches!(self, IngestError::MalformedRow { .. } | IngestError::InvalidUtf8 { .. })
    }
}

/// Line source that tracks byte offsets and reuses its buffer.
struct Lines {
    path: PathBuf,
    reader: BufReader<File>,
    offset: u64,
    line: u64,
    buf: Vec<u8>,
}

impl Lines {
    fn open(path: &Path) -> Result<Self, IngestError> {
        let file = File::open(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
        Ok(Lines {
            path: path.to_path_buf(),
            reader: BufReader::with_capacity(1 << 16, file),
            offset: 0,
            line: 0,
            buf: Vec::new(),
        })
    }

    /// Advances to the next line; returns its starting byte offset.
    fn advance(&mut self) -> Result<Option<u64>, IngestError> {
        self.buf.clear();
        let n = self
            .reader
            .read_until(b'\n', &mut self.buf)
            .map_err(|source| IngestError::Io { path: self.path.clone(), source })?;
        if n == 0 {
            return Ok(None);
        }
        let start = self.offset;
        self.offset += n as u64;
        self.line += 1;
        if self.buf.last() == Some(&b'\n') {
            self.buf.pop();
        }
        Ok(Some(start))
    }

    fn text(&self, start: u64) -> Result<&str, IngestError> {
        std::str::from_utf8(&self.buf).map_err(|e| IngestError::InvalidUtf8 {
            path: self.path.clone(),
            line: self.line,
            offset: start + e.valid_up_to() as u64,
        })
    }

    fn count_rest(&mut self) -> Result<u64, IngestError> {
        while self.advance()?.is_some() {}
        Ok(self.line)
    }
}

enum Source {
    Moses { src: Lines, tgt: Lines },
    Tsv(Lines),
    Jsonl(Lines),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlRecord {
    src: String,
    tgt: String,
    #[serde(default)]
    origin: Option<String>,
    #[serde(default)]
    scores: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct JsonlRecordRef<'a> {
    src: &'a str,
    tgt: &'a str,
    origin: &'a str,
    scores: &'a BTreeMap<String, f64>,
}

/// Streaming pair reader. Yields pairs in file order with ids counting up
/// from the configured start; malformed rows are yielded as row errors and
/// skipped.
pub struct PairReader {
    source: Source,
    origin: String,
    next_id: PairId,
    parsed: u64,
    skipped: u64,
    expected: Option<u64>,
    finished: bool,
}

impl PairReader {
    pub fn open(format: Format, paths: &[PathBuf], origin: impl Into<String>) -> Result<Self, IngestError> {
        if paths.len() != format.path_count() {
            return Err(IngestError::PathCount { format, expected: format.path_count(), got: paths.len() });
        }
        let source = match format {
            Format::MosesPair => Source::Moses { src: Lines::open(&paths[0])?, tgt: Lines::open(&paths[1])? },
            Format::Tsv => Source::Tsv(Lines::open(&paths[0])?),
            Format::Jsonl => Source::Jsonl(Lines::open(&paths[0])?),
        };
        Ok(PairReader {
            source,
            origin: origin.into(),
            next_id: 0,
            parsed: 0,
            skipped: 0,
            expected: None,
            finished: false,
        })
    }

    pub fn with_first_id(mut self, id: PairId) -> Self {
        self.next_id = id;
        self
    }

    pub fn expect_pairs(mut self, expected: Option<u64>) -> Self {
        self.expected = expected;
        self
    }

    pub fn parsed(&self) -> u64 {
        self.parsed
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    fn emit(&mut self, src: &str, tgt: &str, origin: Option<String>, scores: BTreeMap<String, f64>) -> SentencePair {
        let mut pair = SentencePair::new(src, tgt, origin.unwrap_or_else(|| self.origin.clone()), self.next_id);
        pair.scores = scores;
        self.next_id += 1;
        self.parsed += 1;
        pair
    }

    fn step(&mut self) -> Result<Option<SentencePair>, IngestError> {
        match &mut self.source {
            Source::Moses { src, tgt } => {
                let a = src.advance()?;
                let b = tgt.advance()?;
                match (a, b) {
                    (None, None) => Ok(None),
                    (Some(_), None) | (None, Some(_)) => {
                        let src_lines = src.count_rest()?;
                        let tgt_lines = tgt.count_rest()?;
                        Err(IngestError::LineCountMismatch { src_lines, tgt_lines })
                    }
                    (Some(sa), Some(ta)) => {
                        let s = src.text(sa)?.to_owned();
                        let t = tgt.text(ta)?.to_owned();
                        Ok(Some(self.emit(&s, &t, None, BTreeMap::new())))
                    }
                }
            }
            Source::Tsv(lines) => {
                let Some(start) = lines.advance()? else { return Ok(None) };
                let text = lines.text(start)?;
                let fields: Vec<&str> = text.split('\t').collect();
                if !(2..=3).contains(&fields.len()) {
                    return Err(IngestError::MalformedRow {
                        path: lines.path.clone(),
                        line: lines.line,
                        reason: format!("expected 2 or 3 tab-separated fields, found {}", fields.len()),
                    });
                }
                let origin = fields.get(2).map(|s| s.to_string());
                let (s, t) = (fields[0].to_owned(), fields[1].to_owned());
                Ok(Some(self.emit(&s, &t, origin, BTreeMap::new())))
            }
            Source::Jsonl(lines) => {
                let Some(start) = lines.advance()? else { return Ok(None) };
                lines.text(start)?;
                let record: JsonlRecord = serde_json::from_slice(&lines.buf).map_err(|e| {
                    IngestError::MalformedRow { path: lines.path.clone(), line: lines.line, reason: e.to_string() }
                })?;
                Ok(Some(self.emit(&record.src, &record.tgt, record.origin, record.scores)))
            }
        }
    }
}

impl Iterator for PairReader {
    type Item = Result<SentencePair, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        match self.step() {
            Ok(Some(pair)) => Some(Ok(pair)),
            Ok(None) => {
                self.finished = true;
                match self.expected {
                    Some(expected) if expected != self.parsed => Some(Err(IngestError::CountMismatch {
                        origin: self.origin.clone(),
                        expected,
                        parsed: self.parsed,
                    })),
                    _ => None,
                }
            }
            Err(e) if e.is_row_error() => {
                self.skipped += 1;
                Some(Err(e))
            }
            Err(e) => {
                self.finished = true;
                Some(Err(e))
            }
        }
    }
}

/// Opens a reader for one manifest entry; the origin tag is `name version`.
pub fn read_pairs(entry: &DatasetManifestEntry) -> Result<PairReader, IngestError> {
    Ok(PairReader::open(entry.format, &entry.paths, entry.origin())?.expect_pairs(entry.expected_pairs))
}

/// Reads a whole file into memory, logging and skipping row errors.
/// Returns the pairs and the number of skipped rows.
pub fn read_all(format: Format, paths: &[PathBuf], origin: &str) -> Result<(Vec<SentencePair>, u64), IngestError> {
    let mut reader = PairReader::open(format, paths, origin)?;
    let mut pairs = Vec::new();
    for item in reader.by_ref() {
        match item {
            Ok(pair) => pairs.push(pair),
            Err(e) if e.is_row_error() => log::warn!("skipping row: {e}"),
            Err(e) => return Err(e),
        }
    }
    Ok((pairs, reader.skipped()))
}

#[derive(Debug, Error)]
pub enum WriteErrorKind {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{format} needs {expected} path(s), got {got}")]
    PathCount { format: Format, expected: usize, got: usize },
    #[error("pair {id}: {field} contains {what}, which {format} cannot represent")]
    Unrepresentable { id: PairId, field: &'static str, what: &'static str, format: Format },
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
#[error("{kind} (after {written} pairs written)")]
pub struct WriteError {
    pub written: u64,
    #[source]
    pub kind: WriteErrorKind,
}

type Target = (PathBuf, BufWriter<File>);

enum Sink {
    Moses { src: Target, tgt: Target },
    Tsv(Target),
    Jsonl(Target),
}

/// Streaming pair writer.
pub struct PairWriter {
    format: Format,
    sink: Sink,
    written: u64,
}

fn create(path: &Path) -> Result<Target, WriteErrorKind> {
    let file = File::create(path).map_err(|source| WriteErrorKind::Io { path: path.to_path_buf(), source })?;
    Ok((path.to_path_buf(), BufWriter::with_capacity(1 << 16, file)))
}

fn put(target: &mut Target, parts: &[&[u8]]) -> Result<(), WriteErrorKind> {
    for part in parts {
        target.1.write_all(part).map_err(|source| WriteErrorKind::Io { path: target.0.clone(), source })?;
    }
    Ok(())
}

impl PairWriter {
    pub fn create(format: Format, paths: &[PathBuf]) -> Result<Self, WriteError> {
        let fail = |kind| WriteError { written: 0, kind };
        if paths.len() != format.path_count() {
            return Err(fail(WriteErrorKind::PathCount { format, expected: format.path_count(), got: paths.len() }));
        }
        let sink = match format {
            Format::MosesPair => {
                Sink::Moses { src: create(&paths[0]).map_err(fail)?, tgt: create(&paths[1]).map_err(fail)? }
            }
            Format::Tsv => Sink::Tsv(create(&paths[0]).map_err(fail)?),
            Format::Jsonl => Sink::Jsonl(create(&paths[0]).map_err(fail)?),
        };
        Ok(PairWriter { format, sink, written: 0 })
    }

    fn check(
        &self,
        pair: &SentencePair,
        field: &'static str,
        text: &str,
        forbid_tab: bool,
    ) -> Result<(), WriteErrorKind> {
        let what = if text.contains('\n') {
            "a newline"
        } else if forbid_tab && text.contains('\t') {
            "a tab"
        } else {
            return Ok(());
        };
        Err(WriteErrorKind::Unrepresentable { id: pair.id, field, what, format: self.format })
    }

    fn write_inner(&mut self, pair: &SentencePair) -> Result<(), WriteErrorKind> {
        match self.format {
            Format::MosesPair => {
                self.check(pair, "src", &pair.src, false)?;
                self.check(pair, "tgt", &pair.tgt, false)?;
            }
            Format::Tsv => {
                self.check(pair, "src", &pair.src, true)?;
                self.check(pair, "tgt", &pair.tgt, true)?;
                self.check(pair, "origin", &pair.origin, true)?;
            }
            Format::Jsonl => {}
        }
        match &mut self.sink {
            Sink::Moses { src, tgt } => {
                put(src, &[pair.src.as_bytes(), b"\n"])?;
                put(tgt, &[pair.tgt.as_bytes(), b"\n"])?;
            }
            Sink::Tsv(target) => {
                put(target, &[pair.src.as_bytes(), b"\t", pair.tgt.as_bytes(), b"\t", pair.origin.as_bytes(), b"\n"])?;
            }
            Sink::Jsonl(target) => {
                let line = serde_json::to_vec(&JsonlRecordRef {
                    src: &pair.src,
                    tgt: &pair.tgt,
                    origin: &pair.origin,
                    scores: &pair.scores,
                })?;
                put(target, &[&line, b"\n"])?;
            }
        }
        Ok(())
    }

    pub fn write(&mut self, pair: &SentencePair) -> Result<(), WriteError> {
        self.write_inner(pair).map_err(|kind| WriteError { written: self.written, kind })?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    /// Flushes every file and returns the number of pairs written.
    pub fn finish(self) -> Result<u64, WriteError> {
        let written = self.written;
        let flush = |(path, mut w): Target| {
            w.flush().map_err(|source| WriteError { written, kind: WriteErrorKind::Io { path, source } })
        };
        match self.sink {
            Sink::Moses { src, tgt } => {
                flush(src)?;
                flush(tgt)?;
            }
            Sink::Tsv(target) | Sink::Jsonl(target) => flush(target)?,
        }
        Ok(written)
    }
}

/// Writes a whole stream, returning the count written.
pub fn write_pairs<'a, I>(pairs: I, format: Format, paths: &[PathBuf]) -> Result<u64, WriteError>
where
    I: IntoIterator<Item = &'a SentencePair>,
{
    let mut writer = PairWriter::create(format, paths)?;
    for pair in pairs {
        writer.write(pair)?;
    }
    writer.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn moses_pairs_align_by_line() {
        let dir = tempfile::tempdir().unwrap();
        let s = write_file(dir.path(), "a.en", b"one\ntwo\nthree\n");
        let t = write_file(dir.path(), "a.is", b"einn\ntveir\nthrir");
        let pairs: Vec<_> = PairReader::open(Format::MosesPair, &[s, t], "X v1").unwrap().map(Result::unwrap).collect();
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[2].src, "three");
        assert_eq!(pairs[2].tgt, "thrir");
        assert_eq!(pairs.iter().map(|p| p.id).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(pairs[0].origin, "X v1");
    }

    #[test]
    fn moses_mismatch_reports_both_counts() {
        let dir = tempfile::tempdir().unwrap();
        let s = write_file(dir.path(), "a.en", b"1\n2\n3\n");
        let t = write_file(dir.path(), "a.is", b"1\n2\n3\n4\n");
        let results: Vec<_> = PairReader::open(Format::MosesPair, &[s, t], "X").unwrap().collect();
        assert_eq!(results.len(), 4);
        let err = results.last().unwrap().as_ref().unwrap_err();
        assert_eq!(err.to_string(), "line count mismatch 3 vs 4");
    }

    #[test]
    fn tsv_malformed_rows_are_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "a.tsv", b"a\tb\nonly-one-field\nc\td\tcustom\nw\tx\ty\tz\n");
        let mut reader = PairReader::open(Format::Tsv, &[p], "X").unwrap();
        let items: Vec<_> = reader.by_ref().collect();
        assert_eq!(items.len(), 4);
        let ok: Vec<_> = items.into_iter().filter_map(Result::ok).collect();
        assert_eq!(ok.len(), 2);
        assert_eq!(ok[1].origin, "custom");
        assert_eq!(ok[1].id, 1);
        assert_eq!(reader.skipped(), 2);
    }

    #[test]
    fn invalid_utf8_is_a_row_error_with_file_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "a.tsv", b"ok\tfine\nbad\xff\tx\n");
        let items: Vec<_> = PairReader::open(Format::Tsv, &[p], "X").unwrap().collect();
        match &items[1] {
            Err(IngestError::InvalidUtf8 { offset, line, .. }) => {
                assert_eq!(*offset, 11);
                assert_eq!(*line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn expected_count_is_verified() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "a.tsv", b"a\tb\nc\td\n");
        let items: Vec<_> =
            PairReader::open(Format::Tsv, &[p], "ECDC v2016-03-16").unwrap().expect_pairs(Some(3)).collect();
        assert!(matches!(items.last(), Some(Err(IngestError::CountMismatch { expected: 3, parsed: 2, .. }))));
    }

    #[test]
    fn empty_write_creates_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        let paths = vec![dir.path().join("o.en"), dir.path().join("o.is")];
        assert_eq!(write_pairs(std::iter::empty(), Format::MosesPair, &paths).unwrap(), 0);
        assert_eq!(fs::read(&paths[0]).unwrap(), b"");
        assert_eq!(fs::read(&paths[1]).unwrap(), b"");
    }

    #[test]
    fn tsv_rejects_embedded_tabs() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = vec![SentencePair::new("ok", "fine", "o", 0), SentencePair::new("a\tb", "c", "o", 1)];
        let err = write_pairs(&pairs, Format::Tsv, &[dir.path().join("x.tsv")]).unwrap_err();
        assert_eq!(err.written, 1);
        assert!(matches!(err.kind, WriteErrorKind::Unrepresentable { id: 1, what: "a tab", .. }));
    }

    #[test]
    fn jsonl_uses_fixed_field_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        let mut pair = SentencePair::new("Hello.", "Halló.", "ParIce v1", 0);
        pair.scores.insert("similarity".into(), 0.9);
        write_pairs([&pair], Format::Jsonl, std::slice::from_ref(&path)).unwrap();
        let line = fs::read_to_string(&path).unwrap();
        let value: serde_json::Value = serde_json::from_str(line.trim_end()).unwrap();
        let obj = value.as_object().unwrap();
        let mut keys: Vec<_> = obj.keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["origin", "scores", "src", "tgt"]);
        assert!(obj["src"].is_string() && obj["tgt"].is_string() && obj["origin"].is_string());
        assert!(obj["scores"].is_object());
        let back = read_all(Format::Jsonl, &[path], "ignored").unwrap().0;
        assert_eq!(back[0].scores, pair.scores);
        assert_eq!(back[0].origin, "ParIce v1");
    }

    #[test]
    fn format_names_parse() {
        for f in [Format::MosesPair, Format::Tsv, Format::Jsonl] {
            assert_eq!(f.to_string().parse::<Format>().unwrap(), f);
        }
        assert!("tmx".parse::<Format>().is_err());
    }
}
