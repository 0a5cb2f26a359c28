//! Dataset manifest: a semicolon-separated table, one corpus per line.
//!
//! ```text
//! # index; name; version; format; paths; expected_pairs
//! 3; ECDC; v2016-03-16; tsv; ecdc.tsv; 2,512
//! 4; ELRC-2718-EMEA; v1; moses-pair; emea.en,emea.is; 542,624
//! 5; "-3206-antibiotic; v1; moses-pair; ab.en,ab.is;
//! ```
//!
//! Paths are comma-separated and resolved against the manifest's directory.
//! `expected_pairs` may use `,`, `.`, `_` or spaces as digit grouping, or be
//! left empty. A name starting with the ditto mark `"` borrows the prefix
//! (up to the first `-`) of the previous entry's name.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::Format;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifestEntry {
    pub index: u32,
    pub name: String,
    pub version: String,
    pub format: Format,
    pub paths: Vec<PathBuf>,
    pub expected_pairs: Option<u64>,
}

impl DatasetManifestEntry {
    /// Origin tag stamped on every pair read from this entry.
    pub fn origin(&self) -> String {
        format!("{} {}", self.name, self.version)
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: expected 6 `;`-separated fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: bad index `{value}`")]
    BadIndex { line: usize, value: String },
    #[error("line {line}: entry `{name}` has unknown format `{format}`")]
    UnknownFormat { line: usize, name: String, format: String },
    #[error("line {line}: entry `{name}` ({format}) needs {expected} path(s), got {got}")]
    PathCount { line: usize, name: String, format: Format, expected: usize, got: usize },
    #[error("line {line}: entry `{name}` has bad expected_pairs `{value}`")]
    BadCount { line: usize, name: String, value: String },
    #[error("line {line}: ditto name with no previous entry")]
    DanglingDitto { line: usize },
    #[error("line {line}: duplicate entry `{name} {version}` (first on line {first})")]
    Duplicate { line: usize, first: usize, name: String, version: String },
}

fn parse_count(value: &str) -> Option<u64> {
    let digits: String = value.chars().filter(|c| !matches!(c, ',' | '.' | '_' | ' ')).collect();
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Parses manifest text; relative paths are joined onto `base_dir`.
pub fn parse_manifest(text: &str, base_dir: Option<&Path>) -> Result<Vec<DatasetManifestEntry>, ManifestError> {
    let mut entries: Vec<DatasetManifestEntry> = Vec::new();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(';').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(ManifestError::FieldCount { line, found: fields.len() });
        }
        let index = fields[0]
            .trim_end_matches('.')
            .parse::<u32>()
            .map_err(|_| ManifestError::BadIndex { line, value: fields[0].to_string() })?;

        let name = match fields[1].strip_prefix('"') {
            Some(rest) => {
                let prev = entries.last().ok_or(ManifestError::DanglingDitto { line })?;
                let prefix = prev.name.split('-').next().unwrap_or(&prev.name);
                format!("{prefix}{rest}")
            }
            None => fields[1].to_string(),
        };
        let version = fields[2].to_string();

        let format: Format = fields[3].parse().map_err(|_| ManifestError::UnknownFormat {
            line,
            name: name.clone(),
            format: fields[3].to_string(),
        })?;

        let paths: Vec<PathBuf> = fields[4]
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| match base_dir {
                Some(base) if Path::new(p).is_relative() => base.join(p),
                _ => PathBuf::from(p),
            })
            .collect();
        if paths.len() != format.path_count() {
            return Err(ManifestError::PathCount {
                line,
                name,
                format,
                expected: format.path_count(),
                got: paths.len(),
            });
        }

        let expected_pairs = if fields[5].is_empty() {
            None
        } else {
            Some(parse_count(fields[5]).ok_or_else(|| ManifestError::BadCount {
                line,
                name: name.clone(),
                value: fields[5].to_string(),
            })?)
        };

        if let Some(&first) = seen.get(&(name.clone(), version.clone())) {
            return Err(ManifestError::Duplicate { line, first, name, version });
        }
        seen.insert((name.clone(), version.clone()), line);

        entries.push(DatasetManifestEntry { index, name, version, format, paths, expected_pairs });
    }
    Ok(entries)
}

pub fn load_manifest(path: &Path) -> Result<Vec<DatasetManifestEntry>, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })?;
    parse_manifest(&text, path.parent())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entries_in_order() {
        let text = "# comment\n\n3; ECDC; v2016-03-16; tsv; ecdc.tsv; 2,512\n1. ; CCAligned; v1; moses-pair; a.en, a.is; 1,192,542\n";
        let entries = parse_manifest(text, Some(Path::new("/data"))).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].expected_pairs, Some(2512));
        assert_eq!(entries[0].paths, vec![PathBuf::from("/data/ecdc.tsv")]);
        assert_eq!(entries[1].index, 1);
        assert_eq!(entries[1].paths.len(), 2);
        assert_eq!(entries[0].origin(), "ECDC v2016-03-16");
    }

    #[test]
    fn empty_manifest_is_empty() {
        assert!(parse_manifest("", None).unwrap().is_empty());
        assert!(parse_manifest("# only comments\n", None).unwrap().is_empty());
    }

    #[test]
    fn duplicate_name_version_rejected() {
        let text = "48; Tatoeba; v2; tsv; a.tsv; 8,139\n49; Tatoeba; v2; tsv; b.tsv; 8,139\n";
        let err = parse_manifest(text, None).unwrap_err();
        assert!(matches!(err, ManifestError::Duplicate { line: 2, first: 1, .. }), "{err}");
    }

    #[test]
    fn unknown_format_names_entry() {
        let err = parse_manifest("1; KDE4; v2; tmx; k.tmx; 1\n", None).unwrap_err();
        assert_eq!(err.to_string(), "line 1: entry `KDE4` has unknown format `tmx`");
    }

    #[test]
    fn path_count_follows_format() {
        let err = parse_manifest("1; A; v1; moses-pair; only-one; \n", None).unwrap_err();
        assert!(matches!(err, ManifestError::PathCount { expected: 2, got: 1, .. }));
        let err = parse_manifest("1; A; v1; tsv; a.tsv,b.tsv; \n", None).unwrap_err();
        assert!(matches!(err, ManifestError::PathCount { expected: 1, got: 2, .. }));
    }

    #[test]
    fn ditto_expands_prefix() {
        let text = "4; ELRC-2718-EMEA; v1; tsv; a.tsv; 542,624\n5; \"-3206-antibiotic; v1; tsv; b.tsv; 816\n";
        let entries = parse_manifest(text, None).unwrap();
        assert_eq!(entries[1].name, "ELRC-3206-antibiotic");
        assert!(matches!(
            parse_manifest("1; \"-x; v1; tsv; a; \n", None),
            Err(ManifestError::DanglingDitto { line: 1 })
        ));
    }

    #[test]
    fn count_grouping_variants() {
        assert_eq!(parse_count("21.167.708"), Some(21_167_708));
        assert_eq!(parse_count("2,512"), Some(2512));
        assert_eq!(parse_count("12ab"), None);
    }
}
