//! Ordered, sequential filtering with funnel accounting.
//!
//! Each stage sees exactly the previous stage's output. Stages run one at a
//! time over the whole surviving set; within a stage the work is parallel
//! but decisions are identical to a single-threaded run and the output keeps
//! input order.

mod checkpoint;
mod config;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, PipelineState, CHECKPOINT_VERSION};
pub use config::{
    apply_override, validate_order, ConfigError, DedupKeyKind, DedupStageParams, OnScorerError, PipelineConfig,
    ScoreStageParams, StageKind, StageSpec,
};
pub use report::{format_retention, retention_ratio, write_audit, AuditRow, FunnelReport, StageReport, Totals};

use crate::dedup::{DedupError, Deduper, ReferenceSet};
use crate::filters::{charset_filter, judge_score, langid_decide, length_filter, nonalpha_filter, overlap_filter};
use crate::model::{Decision, PairId, Removal, ScoreKindRegistry, SentencePair, StageOutcome};
use crate::scorer::{BackendHandle, GatewayError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("backend `{backend}`: {source}")]
    Attach { backend: String, source: Box<GatewayError> },
    #[error("stage `{stage}`: {source}")]
    Reference { stage: String, source: DedupError },
    #[error("stage `{stage}` halted on pair {pair_id}: {source}{}", resume_hint(.checkpoint))]
    Scorer { stage: String, pair_id: PairId, source: Box<GatewayError>, checkpoint: Option<PathBuf> },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint resumes at stage {next_stage} but the pipeline has {stages}")]
    ResumePoint { next_stage: usize, stages: usize },
    #[error("worker pool: {0}")]
    Pool(String),
}

fn resume_hint(checkpoint: &Option<PathBuf>) -> String {
    match checkpoint {
        Some(p) => format!(" (resume from {})", p.display()),
        None => String::new(),
    }
}

/// Result of a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub pairs: Vec<SentencePair>,
    pub report: FunnelReport,
    /// Removed pairs; empty unless `audit_removed` is set.
    pub audit: Vec<AuditRow>,
}

pub struct Pipeline {
    config: PipelineConfig,
    registry: ScoreKindRegistry,
    backends: BTreeMap<String, BackendHandle>,
    references: Vec<Vec<ReferenceSet>>,
    pool: Option<rayon::ThreadPool>,
    checkpoint_path: Option<PathBuf>,
}

impl Pipeline {
    /// Attaches every configured backend and loads reference sets.
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        let mut backends = BTreeMap::new();
        for (name, spec) in &config.backends {
            let handle = spec
                .attach(name)
                .map_err(|source| PipelineError::Attach { backend: name.clone(), source: Box::new(source) })?;
            backends.insert(name.clone(), handle);
        }
        Self::with_backends(config, backends)
    }

    /// Uses the given handles instead of attaching from the config; every
    /// backend a stage names must be present.
    pub fn with_backends(
        config: PipelineConfig,
        backends: BTreeMap<String, BackendHandle>,
    ) -> Result<Self, PipelineError> {
        let registry = ScoreKindRegistry::default();
        config.validate(&registry)?;
        for stage in &config.stages {
            let needed: Vec<&String> = match &stage.kind {
                StageKind::Score(p) => vec![&p.backend],
                StageKind::LangId(p) => p.detectors.iter().collect(),
                _ => vec![],
            };
            for b in needed {
                if !backends.contains_key(b) {
                    return Err(ConfigError::UnknownBackend { stage: stage.name.clone(), backend: b.clone() }.into());
                }
            }
        }
        let references = config
            .stages
            .iter()
            .map(|s| match &s.kind {
                StageKind::Dedup(d) => d
                    .references
                    .iter()
                    .map(|p| ReferenceSet::load(p))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|source| PipelineError::Reference { stage: s.name.clone(), source }),
                _ => Ok(Vec::new()),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Pipeline { config, registry, backends, references, pool: None, checkpoint_path: None })
    }

    /// Runs stage work on `n` threads instead of the global pool.
    pub fn workers(mut self, n: usize) -> Result<Self, PipelineError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| PipelineError::Pool(e.to_string()))?;
        self.pool = Some(pool);
        Ok(self)
    }

    /// Where checkpoints go, both the ones requested by `checkpoint_every`
    /// and the one left behind when a scorer error halts the run.
    pub fn checkpoint_to(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint_path = Some(path.into());
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn run(&self, pairs: Vec<SentencePair>) -> Result<RunOutput, PipelineError> {
        let report = FunnelReport::new(pairs.len() as u64);
        self.run_from(PipelineState { next_stage: 0, pairs, report, audit: Vec::new() })
    }

    pub fn resume(&self, checkpoint: &Path) -> Result<RunOutput, PipelineError> {
        let state = load_checkpoint(checkpoint, &self.config.fingerprint())?;
        self.run_from(state)
    }

    pub fn run_from(&self, state: PipelineState) -> Result<RunOutput, PipelineError> {
        if state.next_stage > self.config.stages.len() {
            return Err(PipelineError::ResumePoint { next_stage: state.next_stage, stages: self.config.stages.len() });
        }
        match &self.pool {
            Some(pool) => pool.install(|| self.drive(state)),
            None => self.drive(state),
        }
    }

    fn drive(&self, mut state: PipelineState) -> Result<RunOutput, PipelineError> {
        let audit_on = self.config.audit_removed;
        while state.next_stage < self.config.stages.len() {
            let idx = state.next_stage;
            let stage = &self.config.stages[idx];
            let started = Instant::now();
            let outcomes = match self.outcomes(idx, &state.pairs) {
                Ok(o) => o,
                Err((pair_id, source)) => {
                    if let Some(path) = &self.checkpoint_path {
                        save_checkpoint(&state, &self.config.fingerprint(), path)?;
                    }
                    return Err(PipelineError::Scorer {
                        stage: stage.name.clone(),
                        pair_id,
                        source: Box::new(source),
                        checkpoint: self.checkpoint_path.clone(),
                    });
                }
            };
            let (mut removed, mut modified) = (0u64, 0u64);
            let mut kept = Vec::with_capacity(state.pairs.len());
            for (mut pair, outcome) in std::mem::take(&mut state.pairs).into_iter().zip(outcomes) {
                debug_assert_eq!(pair.id, outcome.pair_id);
                if let Some(score) = outcome.score {
                    pair.scores.insert(score.kind, score.value);
                }
                match outcome.decision {
                    Decision::Kept => kept.push(pair),
                    Decision::Modified(edit) => {
                        pair.src = edit.src;
                        pair.tgt = edit.tgt;
                        pair.flags.insert(stage.name.clone());
                        modified += 1;
                        kept.push(pair);
                    }
                    Decision::Removed(r) => {
                        removed += 1;
                        if audit_on {
                            let r = Removal { stage: stage.name.clone(), detail: r.detail };
                            state.audit.push(AuditRow::new(pair, &r));
                        }
                    }
                }
            }
            let elapsed = started.elapsed().as_millis() as u64;
            log::info!(
                "stage {}: {} in, {} removed, {} modified",
                stage.name,
                kept.len() as u64 + removed,
                removed,
                modified
            );
            state.report.push(&stage.name, removed, modified, elapsed);
            state.pairs = kept;
            state.next_stage += 1;
            if self.config.checkpoint_every.contains(&stage.name) {
                if let Some(path) = &self.checkpoint_path {
                    save_checkpoint(&state, &self.config.fingerprint(), path)?;
                }
            }
        }
        Ok(RunOutput { pairs: state.pairs, report: state.report, audit: state.audit })
    }

    /// One outcome per input pair, in input order. `Err` carries the first
    /// failing pair when the policy is to halt.
    fn outcomes(&self, idx: usize, pairs: &[SentencePair]) -> Result<Vec<StageOutcome>, (PairId, GatewayError)> {
        let stage = &self.config.stages[idx];
        match &stage.kind {
            kind if kind.is_heuristic() => Ok(pairs.par_iter().map(|p| self.heuristic_checked(idx, p)).collect()),
            StageKind::Dedup(d) => {
                let key_fn = d.key_fn().expect("validated");
                let mut deduper = Deduper::new(&stage.name, key_fn, self.references[idx].clone())
                    .expect("reference sets share the stage key");
                Ok(deduper.judge_batch(pairs))
            }
            StageKind::Score(p) => self.score_stage(&stage.name, p, pairs),
            StageKind::LangId(p) => self.langid_stage(&stage.name, p, pairs),
            _ => unreachable!("every stage kind is handled"),
        }
    }

    /// A heuristic decision. Edited content must still pass the heuristic
    /// stages that ran earlier, otherwise the pair is removed here.
    fn heuristic_checked(&self, idx: usize, pair: &SentencePair) -> StageOutcome {
        let outcome = heuristic(&self.config.stages[idx].kind, pair);
        let Decision::Modified(edit) = &outcome.decision else {
            return outcome;
        };
        let mut edited = pair.clone();
        edited.src.clone_from(&edit.src);
        edited.tgt.clone_from(&edit.tgt);
        for earlier in &self.config.stages[..idx] {
            if !earlier.kind.is_heuristic() || earlier.kind.modifies_content() {
                continue;
            }
            if let Some(r) = heuristic(&earlier.kind, &edited).removal() {
                let r = Removal { stage: earlier.name.clone(), detail: r.detail.clone() };
                return StageOutcome::removed(pair.id, &self.config.stages[idx].name, format!("after stripping, {r}"));
            }
        }
        outcome
    }

    fn failure(
        &self,
        stage: &str,
        pair_id: PairId,
        error: GatewayError,
    ) -> Result<StageOutcome, (PairId, GatewayError)> {
        match self.config.on_scorer_error {
            OnScorerError::Halt => Err((pair_id, error)),
            OnScorerError::DropPair => Ok(StageOutcome::removed(pair_id, stage, format!("scorer error: {error}"))),
            OnScorerError::KeepPair => Ok(StageOutcome::kept(pair_id)),
        }
    }

    fn score_stage(
        &self,
        stage: &str,
        params: &ScoreStageParams,
        pairs: &[SentencePair],
    ) -> Result<Vec<StageOutcome>, (PairId, GatewayError)> {
        let filter = params.resolve().expect("validated");
        let kind = self.registry.get(&params.score).expect("validated");
        let backend = &self.backends[&params.backend];
        let scored: Vec<Vec<(PairId, Result<f64, GatewayError>)>> = pairs
            .par_chunks(self.config.batch_size)
            .map(|chunk| {
                let batch: Vec<(PairId, &str, &str)> =
                    chunk.iter().map(|p| (p.id, p.src.as_str(), p.tgt.as_str())).collect();
                backend.score_pairs(&batch, kind)
            })
            .collect();
        scored
            .into_iter()
            .flatten()
            .map(|(id, score)| match score {
                Ok(s) => Ok(judge_score(id, s, &filter)),
                Err(e) => self.failure(stage, id, e),
            })
            .collect()
    }

    fn langid_stage(
        &self,
        stage: &str,
        params: &crate::filters::LangIdFilterParams,
        pairs: &[SentencePair],
    ) -> Result<Vec<StageOutcome>, (PairId, GatewayError)> {
        let detectors: Vec<&BackendHandle> = params.detectors.iter().map(|d| &self.backends[d]).collect();
        // per chunk, per detector: src labels then tgt labels
        let labelled: Vec<Vec<Vec<Result<String, GatewayError>>>> = pairs
            .par_chunks(self.config.batch_size)
            .map(|chunk| {
                let texts: Vec<&str> =
                    chunk.iter().map(|p| p.src.as_str()).chain(chunk.iter().map(|p| p.tgt.as_str())).collect();
                detectors
                    .iter()
                    .map(|d| d.detect_language(&texts).into_iter().map(|r| r.map(|det| det.lang)).collect())
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(pairs.len());
        for (chunk, per_detector) in pairs.chunks(self.config.batch_size).zip(labelled) {
            let n = chunk.len();
            for (i, pair) in chunk.iter().enumerate() {
                let mut src = Vec::with_capacity(detectors.len());
                let mut tgt = Vec::with_capacity(detectors.len());
                let mut error = None;
                for labels in &per_detector {
                    for (side, at) in [(&mut src, i), (&mut tgt, n + i)] {
                        match &labels[at] {
                            Ok(l) => side.push(Some(l.clone())),
                            Err(e) => {
                                error.get_or_insert_with(|| e.clone());
                                side.push(None);
                            }
                        }
                    }
                }
                out.push(match error {
                    Some(e) => self.failure(stage, pair.id, e)?,
                    None => langid_decide(pair.id, &src, &tgt, params),
                });
            }
        }
        Ok(out)
    }
}

fn heuristic(kind: &StageKind, pair: &SentencePair) -> StageOutcome {
    match kind {
        StageKind::Length(p) => length_filter(pair, p),
        StageKind::Overlap(p) => overlap_filter(pair, p),
        StageKind::Charset(p) => charset_filter(pair, p),
        StageKind::NonAlpha(p) => nonalpha_filter(pair, p),
        _ => unreachable!("not a heuristic stage"),
    }
}
