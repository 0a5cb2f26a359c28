//! Exact, near-duplicate and cross-dataset deduplication.
//!
//! Keys are 128-bit xxh3 digests of a canonical pair string; only keys are
//! kept in memory. The canonical form is versioned by [`CANON_VERSION`]:
//!
//! * exact: `len(src) as u64 LE ‖ src ‖ 0x1F ‖ tgt`, raw bytes.
//! * near: the same layout over each side reduced by [`near_canonical`].
//!
//! A reference set is a sorted digest file searched by bisection.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_128;

use crate::model::{PairId, SentencePair, StageOutcome};
use crate::text::raw_tokens;

pub const CANON_VERSION: u32 = 1;
const SEPARATOR: u8 = 0x1F;
const REFSET_MAGIC: &[u8; 8] = b"BTXREFS\0";
const REFSET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DedupKey(pub u128);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NearDupParams {
    pub strip_numeric: bool,
    pub strip_mid_sentence_capitalized: bool,
    pub lowercase: bool,
}

impl Default for NearDupParams {
    fn default() -> Self {
        NearDupParams { strip_numeric: true, strip_mid_sentence_capitalized: true, lowercase: true }
    }
}

impl NearDupParams {
    fn flags(self) -> u8 {
        self.strip_numeric as u8 | (self.strip_mid_sentence_capitalized as u8) << 1 | (self.lowercase as u8) << 2
    }
}

/// Which canonicalization a key was computed with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyFn {
    Exact,
    Near(NearDupParams),
}

impl KeyFn {
    pub fn near(params: NearDupParams) -> Result<Self, DedupError> {
        if !params.strip_numeric && !params.strip_mid_sentence_capitalized {
            return Err(DedupError::NoStripRule);
        }
        Ok(KeyFn::Near(params))
    }

    pub fn key(&self, pair: &SentencePair) -> DedupKey {
        match self {
            KeyFn::Exact => exact_key(pair),
            KeyFn::Near(p) => near_dup_key(pair, p),
        }
    }

    fn tag(&self) -> (u8, u8) {
        match self {
            KeyFn::Exact => (0, 0),
            KeyFn::Near(p) => (1, p.flags()),
        }
    }

    fn from_tag(kind: u8, flags: u8) -> Option<Self> {
        match kind {
            0 if flags == 0 => Some(KeyFn::Exact),
            1 if flags < 8 => Some(KeyFn::Near(NearDupParams {
                strip_numeric: flags & 1 != 0,
                strip_mid_sentence_capitalized: flags & 2 != 0,
                lowercase: flags & 4 != 0,
            })),
            _ => None,
        }
    }
}

fn digest(domain: u8, src: &str, tgt: &str) -> DedupKey {
    let mut buf = Vec::with_capacity(src.len() + tgt.len() + 14);
    buf.extend_from_slice(&CANON_VERSION.to_le_bytes());
    buf.push(domain);
    buf.extend_from_slice(&(src.len() as u64).to_le_bytes());
    buf.extend_from_slice(src.as_bytes());
    buf.push(SEPARATOR);
    buf.extend_from_slice(tgt.as_bytes());
    DedupKey(xxh3_128(&buf))
}

pub fn exact_key(pair: &SentencePair) -> DedupKey {
    digest(0, &pair.src, &pair.tgt)
}

/// One side reduced to its likely-generic words: digit-bearing tokens and
/// capitalized tokens that do not open a sentence are dropped.
pub fn near_canonical(text: &str, params: &NearDupParams) -> String {
    let mut kept: Vec<String> = Vec::new();
    let mut sentence_initial = true;
    for token in raw_tokens(text) {
        let initial = sentence_initial;
        sentence_initial = token.ends_with(['.', '!', '?']);
        if params.strip_numeric && token.chars().any(|c| c.is_numeric()) {
            continue;
        }
        if params.strip_mid_sentence_capitalized && !initial && token.chars().next().is_some_and(char::is_uppercase) {
            continue;
        }
        kept.push(if params.lowercase { token.to_lowercase() } else { token.to_string() });
    }
    kept.join(" ")
}

pub fn near_dup_key(pair: &SentencePair, params: &NearDupParams) -> DedupKey {
    digest(1 | params.flags() << 1, &near_canonical(&pair.src, params), &near_canonical(&pair.tgt, params))
}

#[derive(Debug, Error)]
pub enum DedupError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: not a reference-set file")]
    BadMagic { path: PathBuf },
    #[error("{path}: reference-set format {found}, expected {expected}")]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: keys canonicalized with version {found}, this build uses {expected}")]
    Canon { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: unknown key kind {kind}/{flags}")]
    KeyKind { path: PathBuf, kind: u8, flags: u8 },
    #[error("{path}: built with {found:?} keys, stage uses {expected:?}")]
    KeyMismatch { path: PathBuf, found: KeyFn, expected: KeyFn },
    #[error("{path}: truncated or unsorted body")]
    Corrupt { path: PathBuf },
    #[error("near-duplicate keys need at least one stripping rule")]
    NoStripRule,
}

/// Persisted set of keys from datasets already on file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceSet {
    key_fn: KeyFn,
    keys: Vec<u128>,
}

impl ReferenceSet {
    pub fn build<'a>(pairs: impl IntoIterator<Item = &'a SentencePair>, key_fn: KeyFn) -> Self {
        let mut keys: Vec<u128> = pairs.into_iter().map(|p| key_fn.key(p).0).collect();
        keys.sort_unstable();
        keys.dedup();
        ReferenceSet { key_fn, keys }
    }

    pub fn from_keys(keys: impl IntoIterator<Item = DedupKey>, key_fn: KeyFn) -> Self {
        let mut keys: Vec<u128> = keys.into_iter().map(|k| k.0).collect();
        keys.sort_unstable();
        keys.dedup();
        ReferenceSet { key_fn, keys }
    }

    pub fn key_fn(&self) -> KeyFn {
        self.key_fn
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn contains(&self, key: DedupKey) -> bool {
        self.keys.binary_search(&key.0).is_ok()
    }

    /// Header: magic, format version, canonicalization version, key kind,
    /// key flags, 6 reserved bytes, count; then sorted little-endian digests.
    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        let (kind, flags) = self.key_fn.tag();
        w.write_all(REFSET_MAGIC)?;
        w.write_all(&REFSET_VERSION.to_le_bytes())?;
        w.write_all(&CANON_VERSION.to_le_bytes())?;
        w.write_all(&[kind, flags, 0, 0, 0, 0, 0, 0])?;
        w.write_all(&(self.keys.len() as u64).to_le_bytes())?;
        for k in &self.keys {
            w.write_all(&k.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn save(&self, path: &Path) -> Result<(), DedupError> {
        let io_err = |source| DedupError::Io { path: path.to_path_buf(), source };
        let file = File::create(path).map_err(io_err)?;
        self.write_to(BufWriter::new(file)).map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, DedupError> {
        let p = || path.to_path_buf();
        let io_err = |source| DedupError::Io { path: path.to_path_buf(), source };
        let mut r = BufReader::new(File::open(path).map_err(io_err)?);
        let mut header = [0u8; 32];
        if let Err(e) = r.read_exact(&mut header) {
            return Err(if e.kind() == io::ErrorKind::UnexpectedEof {
                DedupError::BadMagic { path: p() }
            } else {
                io_err(e)
            });
        }
        if &header[..8] != REFSET_MAGIC {
            return Err(DedupError::BadMagic { path: p() });
        }
        let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes"));
        let version = u32_at(8);
        if version != REFSET_VERSION {
            return Err(DedupError::Version { path: p(), found: version, expected: REFSET_VERSION });
        }
        let canon = u32_at(12);
        if canon != CANON_VERSION {
            return Err(DedupError::Canon { path: p(), found: canon, expected: CANON_VERSION });
        }
        let key_fn = KeyFn::from_tag(header[16], header[17]).ok_or(DedupError::KeyKind {
            path: p(),
            kind: header[16],
            flags: header[17],
        })?;
        let count = u64::from_le_bytes(header[24..32].try_into().expect("8 bytes"));
        let mut keys = Vec::with_capacity(count.min(1 << 24) as usize);
        let mut buf = [0u8; 16];
        for _ in 0..count {
            r.read_exact(&mut buf).map_err(|_| DedupError::Corrupt { path: p() })?;
            keys.push(u128::from_le_bytes(buf));
        }
        if r.read(&mut buf).map_err(io_err)? != 0 || keys.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DedupError::Corrupt { path: p() });
        }
        Ok(ReferenceSet { key_fn, keys })
    }
}

/// Stateful keep-first filter. Feed pairs in id order.
#[derive(Debug)]
pub struct Deduper {
    stage: String,
    key_fn: KeyFn,
    seen: HashMap<u128, PairId>,
    references: Vec<ReferenceSet>,
}

impl Deduper {
    pub fn new(stage: impl Into<String>, key_fn: KeyFn, references: Vec<ReferenceSet>) -> Result<Self, DedupError> {
        for (i, r) in references.iter().enumerate() {
            if r.key_fn != key_fn {
                return Err(DedupError::KeyMismatch {
                    path: PathBuf::from(format!("reference set #{i}")),
                    found: r.key_fn,
                    expected: key_fn,
                });
            }
        }
        Ok(Deduper { stage: stage.into(), key_fn, seen: HashMap::new(), references })
    }

    pub fn key_fn(&self) -> KeyFn {
        self.key_fn
    }

    fn decide(&mut self, id: PairId, key: DedupKey) -> StageOutcome {
        if let Some(i) = self.references.iter().position(|r| r.contains(key)) {
            return StageOutcome::removed(id, &self.stage, format!("cross-dataset: on file in reference set {i}"));
        }
        match self.seen.get(&key.0) {
            Some(&first) => StageOutcome::removed(id, &self.stage, format!("duplicate of pair {first}")),
            None => {
                self.seen.insert(key.0, id);
                StageOutcome::kept(id)
            }
        }
    }

    pub fn judge(&mut self, pair: &SentencePair) -> StageOutcome {
        let key = self.key_fn.key(pair);
        self.decide(pair.id, key)
    }

    /// Keys are computed in parallel, decisions are taken in slice order,
    /// so the result equals feeding the pairs one by one.
    pub fn judge_batch(&mut self, pairs: &[SentencePair]) -> Vec<StageOutcome> {
        let key_fn = self.key_fn;
        let keys: Vec<DedupKey> = pairs.par_iter().map(|p| key_fn.key(p)).collect();
        pairs.iter().zip(keys).map(|(p, k)| self.decide(p.id, k)).collect()
    }
}

/// Streaming form of [`Deduper`].
pub fn dedup_stream<'a, I>(
    pairs: I,
    stage: &str,
    key_fn: KeyFn,
    references: Vec<ReferenceSet>,
) -> Result<impl Iterator<Item = StageOutcome> + 'a, DedupError>
where
    I: IntoIterator<Item = &'a SentencePair>,
    I::IntoIter: 'a,
{
    let mut deduper = Deduper::new(stage, key_fn, references)?;
    Ok(pairs.into_iter().map(move |p| deduper.judge(p)))
}
