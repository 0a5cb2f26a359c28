//! Deterministic in-process backends.
//!
//! Each stub is a pure function of its seed and the request. They stand in
//! for real models in tests and examples: scores depend only on surface
//! features, and the translator produces an "accented" pseudo-Icelandic.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use super::protocol::{Op, Payload, Responder, ScoreRequest, ScoreResponse};
use super::{Backend, GatewayError};
use crate::filters::token_overlap;
use crate::text::fold_char;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StubKind {
    Similarity,
    CrossLikelihood,
    Qe,
    MtProb,
    LangId,
    Translator,
    Corrector,
    IdentityCorrector,
    Loopback,
}

impl StubKind {
    pub const ALL: [StubKind; 9] = [
        StubKind::Similarity,
        StubKind::CrossLikelihood,
        StubKind::Qe,
        StubKind::MtProb,
        StubKind::LangId,
        StubKind::Translator,
        StubKind::Corrector,
        StubKind::IdentityCorrector,
        StubKind::Loopback,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StubKind::Similarity => "similarity",
            StubKind::CrossLikelihood => "cross_likelihood",
            StubKind::Qe => "qe",
            StubKind::MtProb => "mt_prob",
            StubKind::LangId => "lang_id",
            StubKind::Translator => "translator",
            StubKind::Corrector => "corrector",
            StubKind::IdentityCorrector => "identity_corrector",
            StubKind::Loopback => "loopback",
        }
    }

    pub fn ops(self) -> BTreeSet<Op> {
        let op = match self {
            StubKind::Similarity | StubKind::CrossLikelihood | StubKind::Qe | StubKind::Loopback => Op::ScorePair,
            StubKind::MtProb => Op::ScoreText,
            StubKind::LangId => Op::DetectLang,
            StubKind::Translator => Op::Translate,
            StubKind::Corrector | StubKind::IdentityCorrector => Op::Correct,
        };
        [op].into_iter().collect()
    }
}

impl fmt::Display for StubKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StubKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        StubKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown stub `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubSpec {
    pub kind: StubKind,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct StubBackend {
    name: String,
    spec: StubSpec,
}

impl StubBackend {
    pub fn new(spec: StubSpec) -> Self {
        StubBackend { name: spec.kind.as_str().to_string(), spec }
    }

    pub fn named(name: &str, spec: StubSpec) -> Self {
        StubBackend { name: name.to_string(), spec }
    }

    pub fn spec(&self) -> StubSpec {
        self.spec
    }
}

impl Responder for StubBackend {
    fn ops(&self) -> BTreeSet<Op> {
        self.spec.kind.ops()
    }

    fn respond(&self, request: &ScoreRequest) -> Payload {
        let src = request.src.as_deref().unwrap_or("");
        let tgt = request.tgt.as_deref().unwrap_or("");
        let seed = self.spec.seed;
        match self.spec.kind {
            StubKind::Similarity => Payload::Score(similarity(src, tgt)),
            StubKind::CrossLikelihood => Payload::Score(cross_likelihood(src, tgt)),
            StubKind::Qe => Payload::Score(qe(src, tgt)),
            StubKind::MtProb => Payload::Score(mt_prob(src)),
            StubKind::Loopback => Payload::Score(loopback_score(seed, src, tgt)),
            StubKind::LangId => Payload::Lang { lang: detect(src).to_string(), confidence: 1.0 },
            StubKind::Translator => {
                let n = request.n.unwrap_or(1) as usize;
                Payload::Hyps((0..n).map(|k| translate_hyp(seed, src, k)).collect())
            }
            StubKind::Corrector => Payload::Text(correct(src)),
            StubKind::IdentityCorrector => Payload::Text(src.to_string()),
        }
    }
}

impl Backend for StubBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn ops(&self) -> BTreeSet<Op> {
        self.spec.kind.ops()
    }

    fn exchange(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>, GatewayError> {
        let ops = self.spec.kind.ops();
        Ok(requests
            .iter()
            .map(|r| {
                let id = r.id as i64;
                if !ops.contains(&r.op) {
                    ScoreResponse::error(id, format!("op `{}` not supported", r.op))
                } else {
                    ScoreResponse { id, payload: self.respond(r) }
                }
            })
            .collect())
    }
}

fn folded(text: &str) -> Vec<char> {
    text.chars().map(fold_char).collect()
}

/// Character trigrams of the folded text; a text shorter than three
/// characters is one gram.
fn trigrams(text: &str) -> HashSet<Vec<char>> {
    let chars = folded(text);
    if chars.is_empty() {
        return HashSet::new();
    }
    if chars.len() < 3 {
        return std::iter::once(chars).collect();
    }
    chars.windows(3).map(<[char]>::to_vec).collect()
}

/// Jaccard index of folded character trigrams; two empty texts score 1.
pub fn similarity(src: &str, tgt: &str) -> f64 {
    let a = trigrams(src);
    let b = trigrams(tgt);
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Similarity damped by the length ratio.
pub fn cross_likelihood(src: &str, tgt: &str) -> f64 {
    let (a, b) = (src.chars().count(), tgt.chars().count());
    let ratio = if a.max(b) == 0 { 1.0 } else { a.min(b) as f64 / a.max(b) as f64 };
    similarity(src, tgt) * ratio
}

/// Similarity penalised for copied tokens.
pub fn qe(src: &str, tgt: &str) -> f64 {
    (similarity(src, tgt) - 0.5 * token_overlap(src, tgt).unwrap_or(0.0)).clamp(0.0, 1.0)
}

/// High for English-style quotation or heavy token repetition.
pub fn mt_prob(text: &str) -> f64 {
    let count = |c: char| text.chars().filter(|&x| x == c).count();
    let (low, close, straight) = (count('„'), count('”'), count('"'));
    let denom = low + close + straight;
    let quotes = if denom == 0 { 0.0 } else { (close + straight) as f64 / denom as f64 };
    let tokens = crate::text::tokenize(text);
    let repetition = if tokens.is_empty() {
        0.0
    } else {
        let distinct: HashSet<&String> = tokens.iter().collect();
        1.0 - distinct.len() as f64 / tokens.len() as f64
    };
    quotes.max(repetition)
}

const ICELANDIC_MARKERS: &str = "þðæöáéíóúý";

/// `is` if any character is an Icelandic letter, else `en`.
pub fn detect(text: &str) -> &'static str {
    let marked = text.chars().any(|c| c.to_lowercase().any(|l| ICELANDIC_MARKERS.contains(l)));
    if marked {
        "is"
    } else {
        "en"
    }
}

fn accent(c: char) -> Option<char> {
    Some(match c {
        'a' => 'á',
        'e' => 'é',
        'i' => 'í',
        'o' => 'ó',
        'u' => 'ú',
        'y' => 'ý',
        'A' => 'Á',
        'E' => 'É',
        'I' => 'Í',
        'O' => 'Ó',
        'U' => 'Ú',
        'Y' => 'Ý',
        _ => return None,
    })
}

fn hash_parts(seed: u64, text: &str, index: u64) -> u64 {
    let mut buf = Vec::with_capacity(text.len() + 8);
    buf.extend_from_slice(text.as_bytes());
    buf.extend_from_slice(&index.to_le_bytes());
    xxh3_64_with_seed(&buf, seed)
}

/// Accents a seed-dependent subset of the token's ASCII vowels, at least
/// one when the token has any.
pub fn accent_token(seed: u64, token: &str) -> String {
    let chars: Vec<char> = token.chars().collect();
    let vowels: Vec<usize> = (0..chars.len()).filter(|&i| accent(chars[i]).is_some()).collect();
    let mut out = chars.clone();
    let mut any = false;
    for &i in &vowels {
        if hash_parts(seed, token, i as u64) & 1 == 1 {
            out[i] = accent(chars[i]).expect("vowel");
            any = true;
        }
    }
    if !any {
        if let Some(&i) = vowels.first() {
            out[i] = accent(chars[i]).expect("vowel");
        }
    }
    out.into_iter().collect()
}

/// Hypothesis `k` of the pseudo-translation: the accented base with `k`
/// cumulative perturbations (drop a token, leave one untranslated, swap a
/// neighbour pair).
pub fn translate_hyp(seed: u64, src: &str, k: usize) -> String {
    let mut tokens: Vec<(&str, String)> = src.split_whitespace().map(|t| (t, accent_token(seed, t))).collect();
    for step in 1..=k {
        if tokens.len() < 2 {
            break;
        }
        let h = hash_parts(seed, src, step as u64);
        let at = ((h >> 8) % tokens.len() as u64) as usize;
        match h % 3 {
            0 => {
                tokens.remove(at);
            }
            1 => tokens[at].1 = tokens[at].0.to_string(),
            _ => {
                let at = at.min(tokens.len() - 2);
                tokens.swap(at, at + 1);
            }
        }
    }
    tokens.into_iter().map(|(_, t)| t).collect::<Vec<_>>().join(" ")
}

/// Icelandic-style quotes, single spaces, lowercased hashtags.
pub fn correct(text: &str) -> String {
    let mut quoted = String::with_capacity(text.len());
    let mut open = false;
    for c in text.chars() {
        if c == '"' {
            quoted.push(if open { '“' } else { '„' });
            open = !open;
        } else {
            quoted.push(c);
        }
    }
    quoted
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(|t| if t.starts_with('#') { t.to_lowercase() } else { t.to_string() })
        .collect::<Vec<_>>()
        .join(" ")
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_extend(FNV_OFFSET, bytes)
}

fn fnv1a64_extend(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Reference scorer for protocol conformance: FNV-1a over the seed, source,
/// a unit separator and target, mapped to `[0, 1)` from the top 53 bits.
pub fn loopback_score(seed: u64, src: &str, tgt: &str) -> f64 {
    let mut h = fnv1a64_extend(FNV_OFFSET, &seed.to_le_bytes());
    h = fnv1a64_extend(h, src.as_bytes());
    h = fnv1a64_extend(h, &[0x1F]);
    h = fnv1a64_extend(h, tgt.as_bytes());
    (h >> 11) as f64 / (1u64 << 53) as f64
}
