//! Stage-boundary snapshots.
//!
//! Layout: one JSON header line, then one JSON line per surviving pair. The
//! header carries a digest of the body so truncation or edits are detected
//! before any stage runs. Files are written to a temporary sibling and
//! renamed into place, so a crash never leaves a half-written checkpoint.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::Xxh3;

use super::report::{AuditRow, FunnelReport};
use crate::model::SentencePair;

pub const CHECKPOINT_MAGIC: &str = "bitextkit-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: not a checkpoint")]
    NotCheckpoint { path: PathBuf },
    #[error("{path}: checkpoint version {found}, this build reads {expected}")]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: written for a different pipeline configuration")]
    Fingerprint { path: PathBuf },
    #[error("{path}: corrupt checkpoint: {detail}")]
    Corrupt { path: PathBuf, detail: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u32,
    fingerprint: String,
    next_stage: usize,
    pair_count: u64,
    body_digest: String,
    report: FunnelReport,
    audit: Vec<AuditRow>,
}

/// Everything needed to continue a run at stage `next_stage`.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineState {
    pub next_stage: usize,
    pub pairs: Vec<SentencePair>,
    pub report: FunnelReport,
    pub audit: Vec<AuditRow>,
}

fn pair_line(pair: &SentencePair) -> String {
    serde_json::to_string(pair).expect("pairs serialize")
}

pub fn save_checkpoint(state: &PipelineState, fingerprint: &str, path: &Path) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let lines: Vec<String> = state.pairs.iter().map(pair_line).collect();
    let mut digest = Xxh3::new();
    for line in &lines {
        digest.update(line.as_bytes());
        digest.update(b"\n");
    }
    let header = Header {
        magic: CHECKPOINT_MAGIC.into(),
        version: CHECKPOINT_VERSION,
        fingerprint: fingerprint.into(),
        next_stage: state.next_stage,
        pair_count: lines.len() as u64,
        body_digest: format!("{:032x}", digest.digest128()),
        report: state.report.clone(),
        audit: state.audit.clone(),
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(io_err)?);
        serde_json::to_writer(&mut w, &header).map_err(|e| io_err(e.into()))?;
        w.write_all(b"\n").map_err(io_err)?;
        for line in &lines {
            w.write_all(line.as_bytes()).map_err(io_err)?;
            w.write_all(b"\n").map_err(io_err)?;
        }
        w.into_inner().map_err(|e| io_err(e.into_error()))?.sync_all().map_err(io_err)?;
    }
    fs::rename(&tmp, path).map_err(io_err)
}

/// Loads a checkpoint, refusing one from another version or configuration
/// and any whose body does not match its header.
pub fn load_checkpoint(path: &Path, fingerprint: &str) -> Result<PipelineState, CheckpointError> {
    let p = || path.to_path_buf();
    let corrupt = |detail: String| CheckpointError::Corrupt { path: p(), detail };
    let file = File::open(path).map_err(|source| CheckpointError::Io { path: p(), source })?;
    let mut lines = BufReader::new(file).lines();
    let first = match lines.next() {
        Some(Ok(l)) => l,
        Some(Err(e)) if e.kind() == io::ErrorKind::InvalidData => {
            return Err(CheckpointError::NotCheckpoint { path: p() })
        }
        Some(Err(source)) => return Err(CheckpointError::Io { path: p(), source }),
        None => return Err(CheckpointError::NotCheckpoint { path: p() }),
    };
    let value: serde_json::Value =
        serde_json::from_str(&first).map_err(|_| CheckpointError::NotCheckpoint { path: p() })?;
    if value.get("magic").and_then(|m| m.as_str()) != Some(CHECKPOINT_MAGIC) {
        return Err(CheckpointError::NotCheckpoint { path: p() });
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { path: p(), found: version, expected: CHECKPOINT_VERSION });
    }
    let header: Header = serde_json::from_value(value).map_err(|e| corrupt(format!("header: {e}")))?;
    if header.fingerprint != fingerprint {
        return Err(CheckpointError::Fingerprint { path: p() });
    }
    let mut digest = Xxh3::new();
    let mut pairs = Vec::with_capacity(header.pair_count.min(1 << 24) as usize);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| corrupt(format!("line {}: {e}", i + 2)))?;
        digest.update(line.as_bytes());
        digest.update(b"\n");
        pairs.push(serde_json::from_str(&line).map_err(|e| corrupt(format!("line {}: {e}", i + 2)))?);
    }
    if pairs.len() as u64 != header.pair_count {
        return Err(corrupt(format!("expected {} pairs, found {}", header.pair_count, pairs.len())));
    }
    if format!("{:032x}", digest.digest128()) != header.body_digest {
        return Err(corrupt("body digest mismatch".into()));
    }
    if let Err(e) = header.report.check() {
        return Err(corrupt(format!("report: {e}")));
    }
    if header.report.totals.final_count != header.pair_count {
        return Err(corrupt("report does not match pair count".into()));
    }
    Ok(PipelineState { next_stage: header.next_stage, pairs, report: header.report, audit: header.audit })
}
