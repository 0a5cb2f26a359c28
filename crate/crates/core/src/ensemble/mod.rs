//! Generate, recombine, correct and rerank.
//!
//! For one source paragraph and `B` translator backends with `h` hypotheses
//! each, the pool grows as follows:
//!
//! 1. `B·h` beam hypotheses;
//! 2. `B + 1` sentence-recombined paragraphs: per backend, its best
//!    hypothesis for every sentence, plus one built from the best hypothesis
//!    of any backend;
//! 3. a corrected sibling for every candidate, doubling the pool.
//!
//! Quotes are then normalized for the target language on every candidate
//! and the QE scorer picks the winner.

pub mod punct;
pub mod revert;
pub mod segment;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use punct::{fix_punctuation, quote_style, QuoteStyle};
pub use revert::{apply_reverts, RevertRules};
pub use segment::sentence_split;

use crate::model::{ScoreKind, ScoreKindRegistry, QE};
use crate::scorer::{BackendHandle, GatewayError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    Model(usize),
    Recombined(usize),
    RecombinedCross,
}

impl Origin {
    fn backend_rank(self) -> usize {
        match self {
            Origin::Model(b) | Origin::Recombined(b) => b,
            Origin::RecombinedCross => usize::MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub text: String,
    pub origin: Origin,
    /// Position in the backend's n-best list; recombined candidates rank
    /// after every beam hypothesis.
    pub rank: usize,
    pub corrected: bool,
    /// Pool index of the uncorrected parent, for corrected candidates.
    pub parent: Option<usize>,
    pub qe_score: Option<f64>,
}

impl Candidate {
    fn new(text: String, origin: Origin, rank: usize) -> Self {
        Candidate { text, origin, rank, corrected: false, parent: None, qe_score: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Translator backend ids, in tie-break order.
    pub backends: Vec<String>,
    #[serde(default = "default_hyps")]
    pub hyps_per_model: usize,
    #[serde(default = "default_beam")]
    pub beam: usize,
    #[serde(default)]
    pub corrector: Option<String>,
    /// Backend answering the QE score kind.
    pub qe: String,
    #[serde(default)]
    pub revert_rules: RevertRules,
    #[serde(default = "default_target")]
    pub target_lang: String,
}

fn default_hyps() -> usize {
    5
}
fn default_beam() -> usize {
    12
}
fn default_target() -> String {
    "is".into()
}

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("backend `{backend}` failed: {source}")]
    Backend { backend: String, source: GatewayError },
    #[error("invalid ensemble config: {0}")]
    Config(String),
    #[error("cannot rerank an empty pool")]
    EmptyPool,
    #[error("paragraph file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Attached backends plus configuration.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub config: EnsembleConfig,
    translators: Vec<BackendHandle>,
    corrector: Option<BackendHandle>,
    qe: BackendHandle,
    qe_kind: ScoreKind,
}

fn wrap(backend: &BackendHandle) -> impl Fn(GatewayError) -> EnsembleError + '_ {
    move |source| EnsembleError::Backend { backend: backend.name().to_string(), source }
}

impl Ensemble {
    pub fn new(
        config: EnsembleConfig,
        translators: Vec<BackendHandle>,
        corrector: Option<BackendHandle>,
        qe: BackendHandle,
    ) -> Result<Self, EnsembleError> {
        if config.hyps_per_model == 0 || config.beam < config.hyps_per_model {
            return Err(EnsembleError::Config(format!(
                "need 1 <= hyps_per_model <= beam, got {} and {}",
                config.hyps_per_model, config.beam
            )));
        }
        if translators.is_empty() || translators.len() != config.backends.len() {
            return Err(EnsembleError::Config(format!(
                "{} backend ids but {} translators attached",
                config.backends.len(),
                translators.len()
            )));
        }
        let qe_kind = ScoreKindRegistry::default().get(QE).expect("built-in kind").clone();
        Ok(Ensemble { config, translators, corrector, qe, qe_kind })
    }

    pub fn backend_count(&self) -> usize {
        self.translators.len()
    }

    pub fn origin_label(&self, origin: Origin) -> String {
        match origin {
            Origin::Model(b) => self.config.backends[b].clone(),
            Origin::Recombined(b) => format!("recombined({})", self.config.backends[b]),
            Origin::RecombinedCross => "recombined(cross)".into(),
        }
    }

    fn qe_scores(&self, pairs: &[(u64, &str, &str)]) -> Result<Vec<f64>, EnsembleError> {
        self.qe.score_pairs(pairs, &self.qe_kind).into_iter().map(|(_, r)| r.map_err(wrap(&self.qe))).collect()
    }

    /// `h` beam hypotheses from every backend, best first.
    pub fn generate_pool(&self, paragraph: &str) -> Result<Vec<Candidate>, EnsembleError> {
        let (h, beam) = (self.config.hyps_per_model, self.config.beam);
        let mut pool = Vec::with_capacity(self.translators.len() * h);
        for (b, t) in self.translators.iter().enumerate() {
            let hyps = t.translate(paragraph, h, beam).map_err(wrap(t))?;
            pool.extend(hyps.into_iter().enumerate().map(|(k, text)| Candidate::new(text, Origin::Model(b), k)));
        }
        Ok(pool)
    }

    /// Per sentence, the QE-best hypothesis of each backend and of all
    /// backends together, joined back into paragraphs: `B + 1` candidates.
    pub fn recombine_sentences(&self, paragraph: &str) -> Result<Vec<Candidate>, EnsembleError> {
        let (h, beam) = (self.config.hyps_per_model, self.config.beam);
        let sentences = sentence_split(paragraph);
        let refs: Vec<&str> = sentences.iter().map(String::as_str).collect();
        let nb = self.translators.len();
        // hyps[b][s] = n-best list of backend b for sentence s
        let mut hyps: Vec<Vec<Vec<String>>> = Vec::with_capacity(nb);
        for t in &self.translators {
            let lists: Result<Vec<Vec<String>>, _> = t.translate_batch(&refs, h, beam).into_iter().collect();
            hyps.push(lists.map_err(wrap(t))?);
        }
        let mut batch = Vec::with_capacity(nb * refs.len() * h);
        for per_backend in &hyps {
            for (s, list) in per_backend.iter().enumerate() {
                for hyp in list {
                    batch.push((batch.len() as u64, refs[s], hyp.as_str()));
                }
            }
        }
        let scores = self.qe_scores(&batch)?;
        let score = |b: usize, s: usize, k: usize| scores[(b * refs.len() + s) * h + k];

        // strict `>` keeps the earliest (backend, rank) on ties
        let best_of =
            |b: usize, s: usize| (0..h).fold(0, |best, k| if score(b, s, k) > score(b, s, best) { k } else { best });
        let mut out = Vec::with_capacity(nb + 1);
        for (b, per_backend) in hyps.iter().enumerate() {
            let text = (0..refs.len()).map(|s| per_backend[s][best_of(b, s)].as_str()).collect::<Vec<_>>().join(" ");
            out.push(Candidate::new(text, Origin::Recombined(b), h));
        }
        let cross = (0..refs.len())
            .map(|s| {
                let mut best = (0, best_of(0, s));
                for b in 1..nb {
                    let k = best_of(b, s);
                    if score(b, s, k) > score(best.0, s, best.1) {
                        best = (b, k);
                    }
                }
                hyps[best.0][s][best.1].as_str()
            })
            .collect::<Vec<_>>()
            .join(" ");
        out.push(Candidate::new(cross, Origin::RecombinedCross, h));
        Ok(out)
    }

    /// Appends a corrected sibling for every candidate, with reverts applied.
    /// Without a corrector the siblings are copies.
    pub fn correct_pool(&self, mut pool: Vec<Candidate>) -> Result<Vec<Candidate>, EnsembleError> {
        let texts: Vec<&str> = pool.iter().map(|c| c.text.as_str()).collect();
        let corrected: Vec<String> = match &self.corrector {
            Some(c) => c.correct_batch(&texts).into_iter().collect::<Result<_, _>>().map_err(wrap(c))?,
            None => texts.iter().map(|t| t.to_string()).collect(),
        };
        let n = pool.len();
        for (i, text) in corrected.into_iter().enumerate() {
            let text = apply_reverts(&text, &pool[i].text, &self.config.revert_rules);
            let sibling = Candidate { text, corrected: true, parent: Some(i), qe_score: None, ..pool[i].clone() };
            pool.push(sibling);
        }
        debug_assert_eq!(pool.len(), 2 * n);
        Ok(pool)
    }

    pub fn fix_pool_punctuation(&self, pool: &mut [Candidate]) {
        for c in pool {
            c.text = fix_punctuation(&c.text, &self.config.target_lang);
        }
    }

    /// Scores every candidate against `source` and returns the winner's
    /// index.
    pub fn rerank(&self, source: &str, pool: &mut [Candidate]) -> Result<usize, EnsembleError> {
        let batch: Vec<(u64, &str, &str)> =
            pool.iter().enumerate().map(|(i, c)| (i as u64, source, c.text.as_str())).collect();
        let scores = self.qe_scores(&batch)?;
        for (c, s) in pool.iter_mut().zip(scores) {
            c.qe_score = Some(s);
        }
        pick_winner(pool).ok_or(EnsembleError::EmptyPool)
    }

    /// The full pipeline for one paragraph.
    pub fn translate(&self, source: &str) -> Result<Translation, EnsembleError> {
        let mut pool = self.generate_pool(source)?;
        let generated = pool.len();
        pool.extend(self.recombine_sentences(source)?);
        let recombined = pool.len();
        let mut pool = self.correct_pool(pool)?;
        self.fix_pool_punctuation(&mut pool);
        let winner = self.rerank(source, &mut pool)?;
        Ok(Translation { pool_sizes: [generated, recombined, pool.len()], winner, pool })
    }

    /// Translates paragraphs concurrently; results keep input order.
    pub fn translate_all(&self, sources: &[&str]) -> Result<(Vec<Translation>, SelectionStats), EnsembleError> {
        let results: Vec<Translation> = sources.par_iter().map(|s| self.translate(s)).collect::<Result<_, _>>()?;
        let mut stats = SelectionStats::default();
        for t in &results {
            stats.record(self, &t.pool, t.winner);
        }
        Ok((results, stats))
    }
}

/// Highest QE score; ties prefer uncorrected, then lower backend index,
/// then earlier rank, then earlier pool position.
pub fn pick_winner(pool: &[Candidate]) -> Option<usize> {
    (0..pool.len()).min_by(|&a, &b| {
        let (x, y) = (&pool[a], &pool[b]);
        let (sx, sy) = (x.qe_score.unwrap_or(f64::NEG_INFINITY), y.qe_score.unwrap_or(f64::NEG_INFINITY));
        sy.total_cmp(&sx)
            .then(x.corrected.cmp(&y.corrected))
            .then(x.origin.backend_rank().cmp(&y.origin.backend_rank()))
            .then(x.rank.cmp(&y.rank))
            .then(a.cmp(&b))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    /// Pool size after generation, recombination and correction.
    pub pool_sizes: [usize; 3],
    pub winner: usize,
    pub pool: Vec<Candidate>,
}

impl Translation {
    pub fn best(&self) -> &Candidate {
        &self.pool[self.winner]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginCounts {
    pub selected: u64,
    pub unique: u64,
}

/// How often each origin produced the selected translation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionStats {
    pub paragraphs: u64,
    pub origins: BTreeMap<String, OriginCounts>,
}

impl SelectionStats {
    /// Credits every origin whose candidate text equals the winner's;
    /// `unique` only when exactly one origin produced it.
    pub fn record(&mut self, ensemble: &Ensemble, pool: &[Candidate], winner: usize) {
        let text = &pool[winner].text;
        let producers: BTreeSet<Origin> = pool.iter().filter(|c| &c.text == text).map(|c| c.origin).collect();
        self.paragraphs += 1;
        let unique = producers.len() == 1;
        for origin in producers {
            let entry = self.origins.entry(ensemble.origin_label(origin)).or_default();
            entry.selected += 1;
            entry.unique += unique as u64;
        }
    }

    pub fn merge(&mut self, other: &SelectionStats) {
        self.paragraphs += other.paragraphs;
        for (k, v) in &other.origins {
            let e = self.origins.entry(k.clone()).or_default();
            e.selected += v.selected;
            e.unique += v.unique;
        }
    }
}

impl fmt::Display for SelectionStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>9} {:>7}", "origin", "selected", "unique")?;
        for (k, v) in &self.origins {
            writeln!(f, "{k:<28} {:>9} {:>7}", v.selected, v.unique)?;
        }
        Ok(())
    }
}

/// Input line: `{"id": ..., "src": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paragraph {
    pub id: serde_json::Value,
    pub src: String,
}

/// Output line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankOutput {
    pub id: serde_json::Value,
    pub translation: String,
    pub origin: String,
    pub corrected: bool,
    pub qe_score: f64,
}

impl RerankOutput {
    pub fn new(ensemble: &Ensemble, id: serde_json::Value, t: &Translation) -> Self {
        let best = t.best();
        RerankOutput {
            id,
            translation: best.text.clone(),
            origin: ensemble.origin_label(best.origin),
            corrected: best.corrected,
            qe_score: best.qe_score.unwrap_or(f64::NAN),
        }
    }
}

pub fn read_paragraphs(reader: impl BufRead) -> Result<Vec<Paragraph>, EnsembleError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| EnsembleError::Parse { line: i + 1, message: e.to_string() })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{StubKind, StubSpec};

    fn ensemble(backends: usize, h: usize, corrector: StubKind) -> Ensemble {
        let names: Vec<String> = (0..backends).map(|b| format!("m{b}")).collect();
        let translators = (0..backends)
            .map(|b| BackendHandle::stub(StubSpec { kind: StubKind::Translator, seed: b as u64 + 1 }))
            .collect();
        let config = EnsembleConfig {
            backends: names,
            hyps_per_model: h,
            beam: 12.max(h),
            corrector: Some("c".into()),
            qe: "qe".into(),
            revert_rules: RevertRules::default(),
            target_lang: "is".into(),
        };
        Ensemble::new(
            config,
            translators,
            Some(BackendHandle::stub(StubSpec { kind: corrector, seed: 0 })),
            BackendHandle::stub(StubSpec { kind: StubKind::Qe, seed: 0 }),
        )
        .unwrap()
    }

    #[test]
    fn pool_sizes_follow_the_recipe() {
        let e = ensemble(4, 5, StubKind::Corrector);
        let t = e.translate("The cat sat on the mat. It was \"happy\" there.").unwrap();
        assert_eq!(t.pool_sizes, [20, 25, 50]);
        let e = ensemble(1, 1, StubKind::Corrector);
        assert_eq!(e.translate("One sentence only.").unwrap().pool_sizes, [1, 3, 6]);
    }

    #[test]
    fn identity_corrector_copies_parents() {
        let e = ensemble(2, 3, StubKind::IdentityCorrector);
        let pool = e.generate_pool("Some words here.").unwrap();
        assert_eq!(pool.len(), 6);
        let doubled = e.correct_pool(pool.clone()).unwrap();
        for (i, c) in doubled[6..].iter().enumerate() {
            assert_eq!(c.text, pool[i].text);
            assert_eq!(c.parent, Some(i));
            assert!(c.corrected);
        }
        assert!(e.correct_pool(Vec::new()).unwrap().is_empty());
    }

    #[test]
    fn tie_break_order() {
        let mk = |origin, rank, corrected, score| Candidate {
            text: String::new(),
            origin,
            rank,
            corrected,
            parent: None,
            qe_score: Some(score),
        };
        let pool = vec![
            mk(Origin::RecombinedCross, 5, false, 0.5),
            mk(Origin::Model(1), 0, true, 0.5),
            mk(Origin::Model(1), 0, false, 0.5),
            mk(Origin::Model(0), 3, false, 0.5),
            mk(Origin::Model(0), 1, false, 0.4),
        ];
        assert_eq!(pick_winner(&pool), Some(3));
        assert_eq!(pick_winner(&[]), None);
    }

    #[test]
    fn stats_credit_every_producer() {
        let e = ensemble(2, 1, StubKind::IdentityCorrector);
        let mk = |text: &str, origin| Candidate::new(text.into(), origin, 0);
        let pool = vec![mk("a", Origin::Model(0)), mk("a", Origin::Model(1)), mk("b", Origin::RecombinedCross)];
        let mut stats = SelectionStats::default();
        stats.record(&e, &pool, 0);
        stats.record(&e, &pool, 2);
        assert_eq!(stats.origins["m0"], OriginCounts { selected: 1, unique: 0 });
        assert_eq!(stats.origins["m1"], OriginCounts { selected: 1, unique: 0 });
        assert_eq!(stats.origins["recombined(cross)"], OriginCounts { selected: 1, unique: 1 });
    }
}
