//! Per-pair filter stages.
//!
//! Every filter is a pure function of the pair and its parameters (plus the
//! scorer's answer for the model-backed ones). Boundary conventions:
//!
//! | filter      | removes when                          |
//! |-------------|---------------------------------------|
//! | length      | length < min or length > max          |
//! | overlap     | overlap >= threshold                  |
//! | charset     | allowed ratio < min_allowed_ratio     |
//! | nonalpha    | non-alphabetic ratio > max            |
//! | score       | score < threshold (keep-if-below: >)  |
//! | langid      | agreeing detectors < min_agreeing     |
//!
//! Ratios are computed with a single division so that thresholds written as
//! decimal literals compare exactly against ratios of small integers.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::model::{ScoreKind, SentencePair, StageOutcome};
use crate::scorer::{BackendHandle, GatewayError};
use crate::text::{codepoints, tokenize, ICELANDIC_LETTERS};

pub const LENGTH: &str = "length";
pub const OVERLAP: &str = "overlap";
pub const CHARSET: &str = "charset";
pub const NONALPHA: &str = "nonalpha";
pub const LANGID: &str = "langid";

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("length bounds need min < max (got {min}..{max})")]
    LengthBounds { min: usize, max: usize },
    #[error("{name} must lie in [0, 1], got {value}")]
    Ratio { name: &'static str, value: f64 },
    #[error("min_agreeing must be in 1..={detectors}, got {min_agreeing}")]
    Agreement { min_agreeing: usize, detectors: usize },
    #[error("langid needs at least one detector")]
    NoDetectors,
}

fn check_ratio(name: &'static str, value: f64) -> Result<(), ParamError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ParamError::Ratio { name, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LengthUnit {
    #[default]
    Characters,
    WordTokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LengthFilterParams {
    pub unit: LengthUnit,
    pub min: usize,
    pub max: usize,
}

impl Default for LengthFilterParams {
    fn default() -> Self {
        LengthFilterParams { unit: LengthUnit::Characters, min: 4, max: 150 }
    }
}

impl LengthFilterParams {
    pub fn tokens() -> Self {
        LengthFilterParams { unit: LengthUnit::WordTokens, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.min < self.max {
            Ok(())
        } else {
            Err(ParamError::LengthBounds { min: self.min, max: self.max })
        }
    }

    fn measure(&self, text: &str) -> usize {
        match self.unit {
            LengthUnit::Characters => codepoints(text),
            LengthUnit::WordTokens => text.split_whitespace().count(),
        }
    }
}

/// Keeps a pair iff both sides' lengths lie in `[min, max]`.
pub fn length_filter(pair: &SentencePair, params: &LengthFilterParams) -> StageOutcome {
    for (side, text) in [("src", &pair.src), ("tgt", &pair.tgt)] {
        let len = params.measure(text);
        if len < params.min {
            return StageOutcome::removed(pair.id, LENGTH, format!("{side}={len} < {}", params.min));
        }
        if len > params.max {
            return StageOutcome::removed(pair.id, LENGTH, format!("{side}={len} > {}", params.max));
        }
    }
    StageOutcome::kept(pair.id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverlapFilterParams {
    pub threshold: f64,
}

impl Default for OverlapFilterParams {
    fn default() -> Self {
        OverlapFilterParams { threshold: 0.40 }
    }
}

impl OverlapFilterParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        check_ratio("overlap threshold", self.threshold)
    }
}

/// Shared-token ratio: multiset intersection over the smaller side's token
/// count. `None` when either side has no tokens.
pub fn token_overlap(src: &str, tgt: &str) -> Option<f64> {
    let a = tokenize(src);
    let b = tokenize(tgt);
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &a {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut shared = 0usize;
    for t in &b {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                shared += 1;
            }
        }
    }
    Some(shared as f64 / a.len().min(b.len()) as f64)
}

pub fn overlap_filter(pair: &SentencePair, params: &OverlapFilterParams) -> StageOutcome {
    match token_overlap(&pair.src, &pair.tgt) {
        Some(ratio) if ratio >= params.threshold => {
            StageOutcome::removed(pair.id, OVERLAP, format!("overlap={ratio:.4} >= {}", params.threshold))
        }
        _ => StageOutcome::kept(pair.id),
    }
}

/// Punctuation admitted by the charset filter besides letters and digits.
pub const ALLOWED_PUNCTUATION: &str = ".,;:!?'\"()[]-–—…«»„“”/%&+@ ";

/// The set of codepoints the charset filter accepts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllowedChars(BTreeSet<char>);

impl Default for AllowedChars {
    fn default() -> Self {
        let mut set: BTreeSet<char> = ('a'..='z').chain('A'..='Z').chain('0'..='9').collect();
        set.extend(ICELANDIC_LETTERS.chars());
        set.extend(ALLOWED_PUNCTUATION.chars());
        AllowedChars(set)
    }
}

impl AllowedChars {
    pub fn contains(&self, c: char) -> bool {
        self.0.contains(&c)
    }

    pub fn extend(&mut self, chars: impl IntoIterator<Item = char>) {
        self.0.extend(chars);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for AllowedChars {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.iter().try_for_each(|c| write!(f, "{c}"))
    }
}

impl Serialize for AllowedChars {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for AllowedChars {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(AllowedChars(s.chars().collect()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CharsetFilterParams {
    pub allowed: AllowedChars,
    pub min_allowed_ratio: f64,
    pub strip_disallowed: bool,
}

impl Default for CharsetFilterParams {
    fn default() -> Self {
        CharsetFilterParams { allowed: AllowedChars::default(), min_allowed_ratio: 0.60, strip_disallowed: true }
    }
}

impl CharsetFilterParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        check_ratio("min_allowed_ratio", self.min_allowed_ratio)
    }
}

/// Ratio of allowed codepoints; an empty text counts as fully allowed.
fn allowed_ratio(text: &str, allowed: &AllowedChars) -> (f64, usize) {
    let total = codepoints(text);
    if total == 0 {
        return (1.0, 0);
    }
    let ok = text.chars().filter(|&c| allowed.contains(c)).count();
    (ok as f64 / total as f64, total - ok)
}

/// The only content-modifying filter: removes pairs dominated by foreign
/// symbols and deletes the stray ones from the rest.
pub fn charset_filter(pair: &SentencePair, params: &CharsetFilterParams) -> StageOutcome {
    let (src_ratio, src_bad) = allowed_ratio(&pair.src, &params.allowed);
    let (tgt_ratio, tgt_bad) = allowed_ratio(&pair.tgt, &params.allowed);
    for (side, ratio) in [("src", src_ratio), ("tgt", tgt_ratio)] {
        if ratio < params.min_allowed_ratio {
            return StageOutcome::removed(
                pair.id,
                CHARSET,
                format!("{side} allowed={ratio:.4} < {}", params.min_allowed_ratio),
            );
        }
    }
    if params.strip_disallowed && src_bad + tgt_bad > 0 {
        let strip = |t: &str| t.chars().filter(|&c| params.allowed.contains(c)).collect::<String>();
        return StageOutcome::modified(pair.id, strip(&pair.src), strip(&pair.tgt));
    }
    StageOutcome::kept(pair.id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NonAlphaFilterParams {
    pub max_nonalpha_ratio: f64,
}

impl Default for NonAlphaFilterParams {
    fn default() -> Self {
        NonAlphaFilterParams { max_nonalpha_ratio: 0.20 }
    }
}

impl NonAlphaFilterParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        check_ratio("max_nonalpha_ratio", self.max_nonalpha_ratio)
    }
}

/// Share of codepoints that are neither letters nor whitespace.
pub fn nonalpha_ratio(text: &str) -> f64 {
    let total = codepoints(text);
    if total == 0 {
        return 0.0;
    }
    let odd = text.chars().filter(|c| !c.is_alphabetic() && !c.is_whitespace()).count();
    odd as f64 / total as f64
}

pub fn nonalpha_filter(pair: &SentencePair, params: &NonAlphaFilterParams) -> StageOutcome {
    for (side, text) in [("src", &pair.src), ("tgt", &pair.tgt)] {
        let ratio = nonalpha_ratio(text);
        if ratio > params.max_nonalpha_ratio {
            return StageOutcome::removed(
                pair.id,
                NONALPHA,
                format!("{side} nonalpha={ratio:.4} > {}", params.max_nonalpha_ratio),
            );
        }
    }
    StageOutcome::kept(pair.id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeepIf {
    /// Keep when score >= threshold.
    AtOrAbove,
    /// Keep when score <= threshold.
    AtOrBelow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreFilterParams {
    pub kind: String,
    pub threshold: f64,
    pub keep_if: KeepIf,
}

impl ScoreFilterParams {
    /// Defaults per score kind: similarity 0.8 and cross-likelihood 0.4
    /// (both keep at or above), MT probability 0.5 (keep at or below).
    pub fn for_kind(kind: &str) -> Option<Self> {
        let (threshold, keep_if) = match kind {
            crate::model::SIMILARITY => (0.8, KeepIf::AtOrAbove),
            crate::model::CROSS_LIKELIHOOD => (0.4, KeepIf::AtOrAbove),
            crate::model::MT_PROB => (0.5, KeepIf::AtOrBelow),
            crate::model::QE => (0.5, KeepIf::AtOrAbove),
            _ => return None,
        };
        Some(ScoreFilterParams { kind: kind.to_string(), threshold, keep_if })
    }

    pub fn keeps(&self, score: f64) -> bool {
        match self.keep_if {
            KeepIf::AtOrAbove => score >= self.threshold,
            KeepIf::AtOrBelow => score <= self.threshold,
        }
    }
}

/// Turns an obtained score into a decision; the score rides along so the
/// pipeline can record it on the pair.
pub fn judge_score(pair_id: u64, score: f64, params: &ScoreFilterParams) -> StageOutcome {
    let outcome = if params.keeps(score) {
        StageOutcome::kept(pair_id)
    } else {
        let op = match params.keep_if {
            KeepIf::AtOrAbove => "<",
            KeepIf::AtOrBelow => ">",
        };
        StageOutcome::removed(
            pair_id,
            params.kind.clone(),
            format!("{}={score} {op} {}", params.kind, params.threshold),
        )
    };
    outcome.with_score(params.kind.clone(), score)
}

/// Scores one pair through the gateway and judges it.
pub fn score_filter(
    pair: &SentencePair,
    params: &ScoreFilterParams,
    kind: &ScoreKind,
    scorer: &BackendHandle,
) -> Result<StageOutcome, GatewayError> {
    let mut results = scorer.score_pairs(&[(pair.id, pair.src.as_str(), pair.tgt.as_str())], kind);
    let (_, score) = results.pop().expect("one result per request");
    Ok(judge_score(pair.id, score?, params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LangIdFilterParams {
    pub expected_src: String,
    pub expected_tgt: String,
    pub detectors: Vec<String>,
    /// Defaults to a strict majority of `detectors`.
    #[serde(default)]
    pub min_agreeing: Option<usize>,
}

impl LangIdFilterParams {
    pub fn new(expected_src: &str, expected_tgt: &str, detectors: Vec<String>) -> Self {
        LangIdFilterParams {
            expected_src: expected_src.into(),
            expected_tgt: expected_tgt.into(),
            detectors,
            min_agreeing: None,
        }
    }

    pub fn required(&self) -> usize {
        self.min_agreeing.unwrap_or(self.detectors.len() / 2 + 1)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.detectors.is_empty() {
            return Err(ParamError::NoDetectors);
        }
        let m = self.required();
        if m == 0 || m > self.detectors.len() {
            return Err(ParamError::Agreement { min_agreeing: m, detectors: self.detectors.len() });
        }
        Ok(())
    }
}

/// Decides from per-detector top-1 labels; `None` is a failed detector and
/// never agrees.
pub fn langid_decide(
    pair_id: u64,
    src_labels: &[Option<String>],
    tgt_labels: &[Option<String>],
    params: &LangIdFilterParams,
) -> StageOutcome {
    let need = params.required();
    let total = params.detectors.len();
    for (side, labels, expected) in
        [("src", src_labels, &params.expected_src), ("tgt", tgt_labels, &params.expected_tgt)]
    {
        let agree = labels.iter().filter(|l| l.as_deref() == Some(expected.as_str())).count();
        if agree < need {
            return StageOutcome::removed(
                pair_id,
                LANGID,
                format!("{side} {agree}/{total} detectors say {expected}, need {need}"),
            );
        }
    }
    StageOutcome::kept(pair_id)
}

/// Runs every detector on both sides and counts agreement.
pub fn langid_filter(pair: &SentencePair, params: &LangIdFilterParams, detectors: &[BackendHandle]) -> StageOutcome {
    let mut src_labels = Vec::with_capacity(detectors.len());
    let mut tgt_labels = Vec::with_capacity(detectors.len());
    for detector in detectors {
        let mut found = detector.detect_language(&[pair.src.as_str(), pair.tgt.as_str()]).into_iter();
        for labels in [&mut src_labels, &mut tgt_labels] {
            labels.push(match found.next() {
                Some(Ok(d)) => Some(d.lang),
                Some(Err(e)) => {
                    log::warn!("detector {} failed on pair {}: {e}", detector.name(), pair.id);
                    None
                }
                None => None,
            });
        }
    }
    langid_decide(pair.id, &src_labels, &tgt_labels, params)
}
