//! Shared domain types: the sentence pair that flows through every stage, the
//! per-stage decision record, and the registry of score kinds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sequence number assigned at ingestion.
pub type PairId = u64;

/// One aligned source/target unit.
///
/// Texts are kept byte-exact; nothing here normalizes Unicode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePair {
    pub id: PairId,
    pub src: String,
    pub tgt: String,
    pub origin: String,
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub flags: BTreeSet<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid UTF-8 in {side} text at byte offset {offset}")]
pub struct Utf8Error {
    pub side: &'static str,
    pub offset: usize,
}

impl SentencePair {
    pub fn new(src: impl Into<String>, tgt: impl Into<String>, origin: impl Into<String>, id: PairId) -> Self {
        SentencePair {
            id,
            src: src.into(),
            tgt: tgt.into(),
            origin: origin.into(),
            scores: BTreeMap::new(),
            flags: BTreeSet::new(),
        }
    }

    /// Builds a pair from raw bytes, rejecting invalid UTF-8 with the offset
    /// of the first bad byte.
    pub fn from_bytes(src: &[u8], tgt: &[u8], origin: &str, id: PairId) -> Result<Self, Utf8Error> {
        let src = std::str::from_utf8(src).map_err(|e| Utf8Error { side: "src", offset: e.valid_up_to() })?;
        let tgt = std::str::from_utf8(tgt).map_err(|e| Utf8Error { side: "tgt", offset: e.valid_up_to() })?;
        Ok(SentencePair::new(src, tgt, origin, id))
    }

    pub fn score(&self, kind: &str) -> Option<f64> {
        self.scores.get(kind).copied()
    }
}

/// Convenience constructor mirroring the ingestion contract.
pub fn make_pair(src: &str, tgt: &str, origin: &str, id: PairId) -> SentencePair {
    SentencePair::new(src, tgt, origin, id)
}

/// Why a stage removed a pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub stage: String,
    pub detail: String,
}

impl fmt::Display for Removal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.detail)
    }
}

/// Replacement texts produced by a content-modifying stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub src: String,
    pub tgt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Kept,
    Removed(Removal),
    /// The pair survives with new content.
    Modified(Edit),
}

/// A score observed while judging a pair; recorded on the pair whatever the
/// decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub kind: String,
    pub value: f64,
}

/// The decision of one stage for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub pair_id: PairId,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreRecord>,
}

impl StageOutcome {
    pub fn kept(pair_id: PairId) -> Self {
        StageOutcome { pair_id, decision: Decision::Kept, score: None }
    }

    pub fn removed(pair_id: PairId, stage: impl Into<String>, detail: impl Into<String>) -> Self {
        StageOutcome {
            pair_id,
            decision: Decision::Removed(Removal { stage: stage.into(), detail: detail.into() }),
            score: None,
        }
    }

    pub fn modified(pair_id: PairId, src: String, tgt: String) -> Self {
        StageOutcome { pair_id, decision: Decision::Modified(Edit { src, tgt }), score: None }
    }

    pub fn with_score(mut self, kind: impl Into<String>, value: f64) -> Self {
        self.score = Some(ScoreRecord { kind: kind.into(), value });
        self
    }

    pub fn is_removed(&self) -> bool {
        matches!(self.decision, Decision::Removed(_))
    }

    pub fn removal(&self) -> Option<&Removal> {
        match &self.decision {
            Decision::Removed(r) => Some(r),
            _ => None,
        }
    }
}

/// Which way a score is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreKind {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub direction: Direction,
}

impl ScoreKind {
    pub fn new(name: &str, min: f64, max: f64, direction: Direction) -> Self {
        ScoreKind { name: name.to_string(), min, max, direction }
    }

    pub fn contains(&self, value: f64) -> bool {
        value.is_finite() && value >= self.min && value <= self.max
    }
}

pub const SIMILARITY: &str = "similarity";
pub const CROSS_LIKELIHOOD: &str = "cross_likelihood";
pub const QE: &str = "qe";
pub const MT_PROB: &str = "mt_prob";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("score kind `{0}` is already registered")]
    Duplicate(String),
    #[error("score kind `{0}` is not registered")]
    Unknown(String),
}

/// Registry of known score kinds, keyed by unique name.
#[derive(Debug, Clone)]
pub struct ScoreKindRegistry {
    kinds: BTreeMap<String, ScoreKind>,
}

impl Default for ScoreKindRegistry {
    fn default() -> Self {
        let mut registry = ScoreKindRegistry::empty();
        for kind in [
            ScoreKind::new(SIMILARITY, 0.0, 1.0, Direction::HigherIsBetter),
            ScoreKind::new(CROSS_LIKELIHOOD, 0.0, 1.0, Direction::HigherIsBetter),
            ScoreKind::new(QE, 0.0, 1.0, Direction::HigherIsBetter),
            ScoreKind::new(MT_PROB, 0.0, 1.0, Direction::LowerIsBetter),
        ] {
            registry.register(kind).expect("builtin kinds are distinct");
        }
        registry
    }
}

impl ScoreKindRegistry {
    pub fn empty() -> Self {
        ScoreKindRegistry { kinds: BTreeMap::new() }
    }

    pub fn register(&mut self, kind: ScoreKind) -> Result<(), RegistryError> {
        if self.kinds.contains_key(&kind.name) {
            return Err(RegistryError::Duplicate(kind.name));
        }
        self.kinds.insert(kind.name.clone(), kind);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&ScoreKind, RegistryError> {
        self.kinds.get(name).ok_or_else(|| RegistryError::Unknown(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.kinds.keys().map(String::as_str)
    }
}
