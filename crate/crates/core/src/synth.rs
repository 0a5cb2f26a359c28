//! Best-candidate selection for synthetic (back-translated) pairs.
//!
//! Each source comes with `k` candidate translations. A candidate survives if
//! the pair (source, candidate) passes the three shallow filters and its
//! similarity is at least the threshold; the `keep` best survivors are kept,
//! best first, ties going to the earlier candidate.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filters::{
    length_filter, nonalpha_filter, overlap_filter, LengthFilterParams, NonAlphaFilterParams, OverlapFilterParams,
};
use crate::model::{make_pair, ScoreKind, ScoreKindRegistry, SentencePair, SIMILARITY};
use crate::scorer::{BackendHandle, GatewayError};

pub const SYNTHETIC_ORIGIN: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionParams {
    pub k: usize,
    pub keep: usize,
    pub similarity_threshold: f64,
    pub length: LengthFilterParams,
    pub overlap: OverlapFilterParams,
    pub nonalpha: NonAlphaFilterParams,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            k: 5,
            keep: 2,
            similarity_threshold: 0.8,
            length: LengthFilterParams::tokens(),
            overlap: OverlapFilterParams::default(),
            nonalpha: NonAlphaFilterParams::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("need 1 <= keep <= k, got keep={keep} k={k}")]
    Params { k: usize, keep: usize },
    #[error("source {index}: expected {expected} candidates, got {got}")]
    CandidateCount { index: usize, expected: usize, got: usize },
    #[error("{sources} sources but {lists} candidate lists")]
    Misaligned { sources: usize, lists: usize },
    #[error("candidate file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Scorer(#[from] GatewayError),
}

impl SelectionParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.keep == 0 || self.keep > self.k {
            return Err(SynthError::Params { k: self.k, keep: self.keep });
        }
        Ok(())
    }

    /// Whether (source, candidate) passes length, overlap and non-alphabetic
    /// filters.
    pub fn passes_shallow(&self, source: &str, candidate: &str) -> bool {
        let pair = make_pair(source, candidate, SYNTHETIC_ORIGIN, 0);
        !length_filter(&pair, &self.length).is_removed()
            && !overlap_filter(&pair, &self.overlap).is_removed()
            && !nonalpha_filter(&pair, &self.nonalpha).is_removed()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selected {
    pub index: usize,
    pub text: String,
    pub score: f64,
}

/// Selection given shallow verdicts and scores; `None` marks a candidate
/// that was not scored.
pub fn rank_candidates(scores: &[Option<f64>], threshold: f64, keep: usize) -> Vec<usize> {
    let mut eligible: Vec<(usize, f64)> =
        scores.iter().enumerate().filter_map(|(i, s)| s.filter(|&v| v >= threshold).map(|v| (i, v))).collect();
    eligible.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    eligible.into_iter().take(keep).map(|(i, _)| i).collect()
}

fn similarity_kind() -> ScoreKind {
    ScoreKindRegistry::default().get(SIMILARITY).expect("built-in kind").clone()
}

fn select_many(
    items: &[(&str, &[String])],
    params: &SelectionParams,
    scorer: &BackendHandle,
    kind: &ScoreKind,
) -> Result<Vec<Vec<Selected>>, SynthError> {
    let mut batch: Vec<(u64, &str, &str)> = Vec::new();
    for (i, (source, candidates)) in items.iter().enumerate() {
        for (j, cand) in candidates.iter().enumerate() {
            if params.passes_shallow(source, cand) {
                batch.push(((i * params.k + j) as u64, source, cand.as_str()));
            }
        }
    }
    let mut scores: Vec<Vec<Option<f64>>> = items.iter().map(|(_, c)| vec![None; c.len()]).collect();
    for (slot, result) in scorer.score_pairs(&batch, kind) {
        let slot = slot as usize;
        scores[slot / params.k][slot % params.k] = Some(result?);
    }
    Ok(items
        .iter()
        .zip(&scores)
        .map(|((_, candidates), scores)| {
            rank_candidates(scores, params.similarity_threshold, params.keep)
                .into_iter()
                .map(|i| Selected { index: i, text: candidates[i].clone(), score: scores[i].expect("ranked") })
                .collect()
        })
        .collect())
}

/// Selects up to `keep` candidates for one source.
pub fn select(
    source: &str,
    candidates: &[String],
    params: &SelectionParams,
    scorer: &BackendHandle,
) -> Result<Vec<Selected>, SynthError> {
    params.validate()?;
    if candidates.len() != params.k {
        return Err(SynthError::CandidateCount { index: 0, expected: params.k, got: candidates.len() });
    }
    Ok(select_many(&[(source, candidates)], params, scorer, &similarity_kind())?.pop().expect("one source"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionStats {
    pub sources: u64,
    pub candidates_seen: u64,
    pub kept: u64,
    /// `kept_per_source[n]` = number of sources that kept `n` candidates.
    pub kept_per_source: Vec<u64>,
}

impl SelectionStats {
    fn new(keep: usize) -> Self {
        SelectionStats { sources: 0, candidates_seen: 0, kept: 0, kept_per_source: vec![0; keep + 1] }
    }
}

/// Candidate-list line: `{"source": ..., "candidates": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub source: String,
    pub candidates: Vec<String>,
}

pub fn read_candidate_records(reader: impl BufRead) -> impl Iterator<Item = Result<CandidateRecord, SynthError>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(SynthError::Io(e))),
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(serde_json::from_str(&l).map_err(|e| SynthError::Parse { line: i + 1, message: e.to_string() })),
    })
}

const CHUNK: usize = 256;

/// Runs selection over aligned source and candidate streams. Emitted pairs
/// are (source, candidate) with origin `synthetic`, sequential ids and the
/// similarity score attached.
pub fn select_corpus<S, C>(
    sources: S,
    candidate_lists: C,
    params: &SelectionParams,
    scorer: &BackendHandle,
) -> Result<(Vec<SentencePair>, SelectionStats), SynthError>
where
    S: IntoIterator<Item = String>,
    C: IntoIterator<Item = Vec<String>>,
{
    params.validate()?;
    let kind = similarity_kind();
    let mut stats = SelectionStats::new(params.keep);
    let mut out = Vec::new();
    let mut sources = sources.into_iter();
    let mut lists = candidate_lists.into_iter();
    let mut chunk: Vec<(String, Vec<String>)> = Vec::with_capacity(CHUNK);
    loop {
        let next = match (sources.next(), lists.next()) {
            (Some(s), Some(c)) => Some((s, c)),
            (None, None) => None,
            (s, c) => {
                let seen = stats.sources as usize + chunk.len();
                let (extra_s, extra_c) = (s.is_some() as usize + sources.count(), c.is_some() as usize + lists.count());
                return Err(SynthError::Misaligned { sources: seen + extra_s, lists: seen + extra_c });
            }
        };
        let done = next.is_none();
        if let Some((s, c)) = next {
            if c.len() != params.k {
                let index = stats.sources as usize + chunk.len();
                return Err(SynthError::CandidateCount { index, expected: params.k, got: c.len() });
            }
            chunk.push((s, c));
            if chunk.len() < CHUNK {
                continue;
            }
        }
        if !chunk.is_empty() {
            let items: Vec<(&str, &[String])> = chunk.iter().map(|(s, c)| (s.as_str(), c.as_slice())).collect();
            for ((source, _), picked) in chunk.iter().zip(select_many(&items, params, scorer, &kind)?) {
                stats.sources += 1;
                stats.candidates_seen += params.k as u64;
                stats.kept += picked.len() as u64;
                stats.kept_per_source[picked.len()] += 1;
                for sel in picked {
                    let mut pair = make_pair(source, &sel.text, SYNTHETIC_ORIGIN, out.len() as u64);
                    pair.scores.insert(kind.name.clone(), sel.score);
                    out.push(pair);
                }
            }
            chunk.clear();
        }
        if done {
            break;
        }
    }
    Ok((out, stats))
}
