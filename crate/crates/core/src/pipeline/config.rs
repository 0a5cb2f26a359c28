//! Pipeline configuration: a TOML file with one `[[stage]]` table per stage.
//!
//! ```toml
//! on_scorer_error = "halt"
//! audit_removed = true
//!
//! [backends.labse]
//! stub = "similarity"
//!
//! [[stage]]
//! kind = "length"
//! min = 4
//! max = 150
//!
//! [[stage]]
//! kind = "score"
//! score = "similarity"
//! backend = "labse"
//! ```
//!
//! Omitted parameters take their defaults. Stage names default to the kind
//! (the score kind for `score` stages, `dedup_<key>` for dedup stages, with
//! `_reference` appended when reference sets are given) and must be unique.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64;

use crate::dedup::{DedupError, KeyFn, NearDupParams};
use crate::filters::{
    CharsetFilterParams, KeepIf, LangIdFilterParams, LengthFilterParams, NonAlphaFilterParams, OverlapFilterParams,
    ParamError, ScoreFilterParams,
};
use crate::model::{ScoreKindRegistry, CROSS_LIKELIHOOD, SIMILARITY};
use crate::scorer::BackendSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("stage #{index}: missing `kind`")]
    MissingKind { index: usize },
    #[error("stage #{index}: unknown kind `{kind}`")]
    UnknownKind { index: usize, kind: String },
    #[error("stage `{stage}`: {message}")]
    Stage { stage: String, message: String },
    #[error("stage `{stage}`: {source}")]
    Param { stage: String, source: ParamError },
    #[error("duplicate stage name `{0}`")]
    DuplicateName(String),
    #[error("stage `{stage}` uses unknown score kind `{kind}`")]
    UnknownScoreKind { stage: String, kind: String },
    #[error("stage `{stage}` references undefined backend `{backend}`")]
    UnknownBackend { stage: String, backend: String },
    #[error("checkpoint_every names unknown stage `{0}`")]
    UnknownCheckpointStage(String),
    #[error("override `{key}`: {message}")]
    Override { key: String, message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OnScorerError {
    /// Stop and leave a checkpoint to resume from.
    #[default]
    Halt,
    /// Remove the pair, reporting the error as the reason.
    DropPair,
    /// Keep the pair without a score.
    KeepPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreStageParams {
    /// Registered score kind.
    pub score: String,
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_if: Option<KeepIf>,
}

impl ScoreStageParams {
    /// Threshold and direction, falling back to the kind's defaults.
    pub fn resolve(&self) -> Option<ScoreFilterParams> {
        let defaults = ScoreFilterParams::for_kind(&self.score);
        let threshold = self.threshold.or(defaults.as_ref().map(|d| d.threshold))?;
        let keep_if = self.keep_if.or(defaults.as_ref().map(|d| d.keep_if)).unwrap_or(KeepIf::AtOrAbove);
        Some(ScoreFilterParams { kind: self.score.clone(), threshold, keep_if })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupKeyKind {
    Exact,
    Near,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DedupStageParams {
    pub key: DedupKeyKind,
    #[serde(default = "yes")]
    pub strip_numeric: bool,
    #[serde(default = "yes")]
    pub strip_mid_sentence_capitalized: bool,
    #[serde(default = "yes")]
    pub lowercase: bool,
    /// Reference-set files of datasets already on file.
    #[serde(default)]
    pub references: Vec<PathBuf>,
}

fn yes() -> bool {
    true
}

impl DedupStageParams {
    pub fn exact() -> Self {
        DedupStageParams {
            key: DedupKeyKind::Exact,
            strip_numeric: true,
            strip_mid_sentence_capitalized: true,
            lowercase: true,
            references: Vec::new(),
        }
    }

    pub fn near() -> Self {
        DedupStageParams { key: DedupKeyKind::Near, ..Self::exact() }
    }

    pub fn key_fn(&self) -> Result<KeyFn, DedupError> {
        match self.key {
            DedupKeyKind::Exact => Ok(KeyFn::Exact),
            DedupKeyKind::Near => KeyFn::near(NearDupParams {
                strip_numeric: self.strip_numeric,
                strip_mid_sentence_capitalized: self.strip_mid_sentence_capitalized,
                lowercase: self.lowercase,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageKind {
    Length(LengthFilterParams),
    Overlap(OverlapFilterParams),
    Charset(CharsetFilterParams),
    #[serde(rename = "nonalpha")]
    NonAlpha(NonAlphaFilterParams),
    Score(ScoreStageParams),
    #[serde(rename = "langid")]
    LangId(LangIdFilterParams),
    Dedup(DedupStageParams),
}

impl StageKind {
    pub fn tag(&self) -> &'static str {
        match self {
            StageKind::Length(_) => "length",
            StageKind::Overlap(_) => "overlap",
            StageKind::Charset(_) => "charset",
            StageKind::NonAlpha(_) => "nonalpha",
            StageKind::Score(_) => "score",
            StageKind::LangId(_) => "langid",
            StageKind::Dedup(_) => "dedup",
        }
    }

    /// Model-free per-pair filters.
    pub fn is_heuristic(&self) -> bool {
        matches!(self, StageKind::Length(_) | StageKind::Overlap(_) | StageKind::Charset(_) | StageKind::NonAlpha(_))
    }

    pub fn is_scorer_backed(&self) -> bool {
        matches!(self, StageKind::Score(_) | StageKind::LangId(_))
    }

    pub fn modifies_content(&self) -> bool {
        matches!(self, StageKind::Charset(CharsetFilterParams { strip_disallowed: true, .. }))
    }

    pub fn default_name(&self) -> String {
        match self {
            StageKind::Score(p) => p.score.clone(),
            StageKind::Dedup(p) => {
                let key = match p.key {
                    DedupKeyKind::Exact => "exact",
                    DedupKeyKind::Near => "near",
                };
                let suffix = if p.references.is_empty() { "" } else { "_reference" };
                format!("dedup_{key}{suffix}")
            }
            other => other.tag().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSpec {
    pub name: String,
    pub kind: StageKind,
}

impl StageSpec {
    pub fn new(kind: StageKind) -> Self {
        StageSpec { name: kind.default_name(), kind }
    }

    pub fn named(name: &str, kind: StageKind) -> Self {
        StageSpec { name: name.to_string(), kind }
    }

    fn from_table(index: usize, mut table: toml::Table) -> Result<Self, ConfigError> {
        let kind = match table.remove("kind") {
            Some(toml::Value::String(k)) => k,
            Some(other) => return Err(ConfigError::UnknownKind { index, kind: other.to_string() }),
            None => return Err(ConfigError::MissingKind { index }),
        };
        let name = match table.remove("name") {
            Some(toml::Value::String(n)) => Some(n),
            Some(other) => {
                return Err(ConfigError::Stage { stage: format!("#{index}"), message: format!("bad name {other}") })
            }
            None => None,
        };
        let label = name.clone().unwrap_or_else(|| kind.clone());
        let body = toml::Value::Table(table);
        fn parse<T: serde::de::DeserializeOwned>(body: toml::Value, label: &str) -> Result<T, ConfigError> {
            body.try_into().map_err(|e: toml::de::Error| ConfigError::Stage {
                stage: label.to_string(),
                message: e.message().trim().to_string(),
            })
        }
        let kind = match kind.as_str() {
            "length" => StageKind::Length(parse(body, &label)?),
            "overlap" => StageKind::Overlap(parse(body, &label)?),
            "charset" => StageKind::Charset(parse(body, &label)?),
            "nonalpha" => StageKind::NonAlpha(parse(body, &label)?),
            "score" => StageKind::Score(parse(body, &label)?),
            "langid" => StageKind::LangId(parse(body, &label)?),
            "dedup" => StageKind::Dedup(parse(body, &label)?),
            _ => return Err(ConfigError::UnknownKind { index, kind }),
        };
        Ok(match name {
            Some(n) => StageSpec::named(&n, kind),
            None => StageSpec::new(kind),
        })
    }

    fn to_table(&self) -> toml::Table {
        let mut table = match toml::Value::try_from(&self.kind) {
            Ok(toml::Value::Table(t)) => t,
            _ => unreachable!("stage kinds serialize to tables"),
        };
        table.insert("name".into(), toml::Value::String(self.name.clone()));
        table
    }
}

fn default_batch_size() -> usize {
    512
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    on_scorer_error: OnScorerError,
    #[serde(default)]
    checkpoint_every: Vec<String>,
    #[serde(default)]
    audit_removed: bool,
    #[serde(default = "default_batch_size")]
    batch_size: usize,
    #[serde(default)]
    backends: BTreeMap<String, BackendSpec>,
    #[serde(default)]
    stage: Vec<toml::Table>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub stages: Vec<StageSpec>,
    pub on_scorer_error: OnScorerError,
    /// Stages after which a checkpoint is written.
    pub checkpoint_every: Vec<String>,
    pub audit_removed: bool,
    /// Pairs per scorer request batch.
    pub batch_size: usize,
    pub backends: BTreeMap<String, BackendSpec>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stages: Vec::new(),
            on_scorer_error: OnScorerError::Halt,
            checkpoint_every: Vec::new(),
            audit_removed: false,
            batch_size: default_batch_size(),
            backends: BTreeMap::new(),
        }
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn stage_table_name(table: &toml::Table) -> Option<String> {
    if let Some(toml::Value::String(n)) = table.get("name") {
        return Some(n.clone());
    }
    let mut probe = table.clone();
    probe.remove("name");
    StageSpec::from_table(0, probe).ok().map(|s| s.name)
}

/// Sets `key` (dotted path) to `value` in a raw config table. Stage fields
/// are addressed as `stage.<stage name>.<field>`.
pub fn apply_override(root: &mut toml::Table, key: &str, value: &str) -> Result<(), ConfigError> {
    let err = |message: String| ConfigError::Override { key: key.to_string(), message };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(err("empty path segment".into()));
    }
    let value = parse_override_value(value);
    let (mut table, rest): (&mut toml::Table, &[&str]) = if parts[0] == "stage" {
        if parts.len() < 3 {
            return Err(err("expected stage.<name>.<field>".into()));
        }
        let stages = match root.get_mut("stage") {
            Some(toml::Value::Array(a)) => a,
            _ => return Err(err("config has no stages".into())),
        };
        let found = stages.iter_mut().find_map(|v| match v {
            toml::Value::Table(t) if stage_table_name(t).as_deref() == Some(parts[1]) => Some(t),
            _ => None,
        });
        (found.ok_or_else(|| err(format!("no stage named `{}`", parts[1])))?, &parts[2..])
    } else {
        (root, &parts[..])
    };
    let (last, path) = rest.split_last().expect("non-empty");
    for seg in path {
        let entry = table.entry(seg.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(err(format!("`{seg}` is not a table"))),
        };
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with(text, &[])
    }

    /// Parses `text`, then applies `key=value` overrides in order.
    pub fn from_toml_with(text: &str, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut root: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut root, k, v)?;
        }
        Self::from_table(root, None)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut root: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut root, k, v)?;
        }
        Self::from_table(root, path.parent())
    }

    /// Builds a config from an already parsed table. Relative reference-set
    /// paths are joined onto `base_dir` when given.
    pub fn from_table(root: toml::Table, base_dir: Option<&Path>) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.message().to_string()))?;
        let stages = raw
            .stage
            .into_iter()
            .enumerate()
            .map(|(i, t)| StageSpec::from_table(i, t))
            .collect::<Result<Vec<_>, _>>()?;
        let mut stages = stages;
        if let Some(base) = base_dir {
            for stage in &mut stages {
                if let StageKind::Dedup(d) = &mut stage.kind {
                    for r in &mut d.references {
                        if r.is_relative() {
                            *r = base.join(&*r);
                        }
                    }
                }
            }
        }
        let config = PipelineConfig {
            stages,
            on_scorer_error: raw.on_scorer_error,
            checkpoint_every: raw.checkpoint_every,
            audit_removed: raw.audit_removed,
            batch_size: raw.batch_size,
            backends: raw.backends,
        };
        config.validate(&ScoreKindRegistry::default())?;
        Ok(config)
    }

    /// Structural checks: unique names, valid parameters, known score kinds
    /// and backends.
    pub fn validate(&self, registry: &ScoreKindRegistry) -> Result<(), ConfigError> {
        let mut names = BTreeSet::new();
        for stage in &self.stages {
            let name = &stage.name;
            if !names.insert(name.as_str()) {
                return Err(ConfigError::DuplicateName(name.clone()));
            }
            let param = |source| ConfigError::Param { stage: name.clone(), source };
            match &stage.kind {
                StageKind::Length(p) => p.validate().map_err(param)?,
                StageKind::Overlap(p) => p.validate().map_err(param)?,
                StageKind::Charset(p) => p.validate().map_err(param)?,
                StageKind::NonAlpha(p) => p.validate().map_err(param)?,
                StageKind::LangId(p) => {
                    p.validate().map_err(param)?;
                    for d in &p.detectors {
                        if !self.backends.contains_key(d) {
                            return Err(ConfigError::UnknownBackend { stage: name.clone(), backend: d.clone() });
                        }
                    }
                }
                StageKind::Score(p) => {
                    if registry.get(&p.score).is_err() {
                        return Err(ConfigError::UnknownScoreKind { stage: name.clone(), kind: p.score.clone() });
                    }
                    if p.resolve().is_none() {
                        return Err(ConfigError::Stage {
                            stage: name.clone(),
                            message: format!("score kind `{}` has no default threshold; set `threshold`", p.score),
                        });
                    }
                    if !self.backends.contains_key(&p.backend) {
                        return Err(ConfigError::UnknownBackend { stage: name.clone(), backend: p.backend.clone() });
                    }
                }
                StageKind::Dedup(p) => {
                    p.key_fn().map_err(|e| ConfigError::Stage { stage: name.clone(), message: e.to_string() })?;
                }
            }
        }
        for c in &self.checkpoint_every {
            if !names.contains(c.as_str()) {
                return Err(ConfigError::UnknownCheckpointStage(c.clone()));
            }
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Syntax("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        let mut root = toml::Table::new();
        let on_err = toml::Value::try_from(self.on_scorer_error).expect("enum serializes");
        root.insert("on_scorer_error".into(), on_err);
        root.insert("audit_removed".into(), toml::Value::Boolean(self.audit_removed));
        root.insert("batch_size".into(), toml::Value::Integer(self.batch_size as i64));
        root.insert(
            "checkpoint_every".into(),
            toml::Value::Array(self.checkpoint_every.iter().cloned().map(toml::Value::String).collect()),
        );
        if !self.backends.is_empty() {
            root.insert("backends".into(), toml::Value::try_from(&self.backends).expect("backends serialize"));
        }
        root.insert(
            "stage".into(),
            toml::Value::Array(self.stages.iter().map(|s| toml::Value::Table(s.to_table())).collect()),
        );
        toml::to_string(&root).expect("config serializes")
    }

    /// Identifies what a checkpoint's pairs depend on: the stages and the
    /// backends, not operational knobs such as batch size.
    pub fn fingerprint(&self) -> String {
        let stages: Vec<toml::Value> = self.stages.iter().map(|s| toml::Value::Table(s.to_table())).collect();
        let mut root = toml::Table::new();
        root.insert("stage".into(), toml::Value::Array(stages));
        root.insert("backends".into(), toml::Value::try_from(&self.backends).expect("backends serialize"));
        format!("{:016x}", xxh3_64(toml::to_string(&root).expect("serializes").as_bytes()))
    }

    pub fn stage(&self, name: &str) -> Option<&StageSpec> {
        self.stages.iter().find(|s| s.name == name)
    }
}

/// Cost-ordering advice; never an error.
pub fn validate_order(config: &PipelineConfig) -> Vec<String> {
    let stages = &config.stages;
    let mut warnings = Vec::new();
    for (i, s) in stages.iter().enumerate() {
        if s.kind.is_scorer_backed() {
            if let Some(later) = stages[i + 1..].iter().find(|t| t.kind.is_heuristic()) {
                warnings.push(format!(
                    "scorer-backed stage `{}` runs before heuristic stage `{}`; cheap filters should go first",
                    s.name, later.name
                ));
            }
        }
        if let StageKind::Score(p) = &s.kind {
            if p.score == CROSS_LIKELIHOOD {
                let later_sim =
                    stages[i + 1..].iter().find(|t| matches!(&t.kind, StageKind::Score(q) if q.score == SIMILARITY));
                if let Some(t) = later_sim {
                    warnings.push(format!(
                        "cross-likelihood stage `{}` runs before similarity stage `{}`; the heavier scorer should run last",
                        s.name, t.name
                    ));
                }
            }
        }
        if matches!(s.kind, StageKind::Dedup(_)) {
            if let Some(later) = stages[i + 1..].iter().find(|t| t.kind.modifies_content()) {
                warnings.push(format!(
                    "dedup stage `{}` runs before content-modifying stage `{}`; edited pairs may collide later",
                    s.name, later.name
                ));
            }
        }
    }
    warnings
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
        [backends.sim]
        stub = "similarity"

        [[stage]]
        kind = "length"

        [[stage]]
        kind = "score"
        score = "similarity"
        backend = "sim"
    "#;

    #[test]
    fn defaults_fill_in() {
        let c = PipelineConfig::from_toml(SMALL).unwrap();
        assert_eq!(c.stages.len(), 2);
        assert_eq!(c.stages[0].name, "length");
        assert_eq!(c.stages[0].kind, StageKind::Length(LengthFilterParams::default()));
        let StageKind::Score(p) = &c.stages[1].kind else { panic!() };
        assert_eq!(p.resolve().unwrap().threshold, 0.8);
        assert_eq!(c.on_scorer_error, OnScorerError::Halt);
        assert_eq!(c.batch_size, 512);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
        let bad = "[[stage]]\nkind = \"length\"\nminimum = 3\n";
        assert!(matches!(PipelineConfig::from_toml(bad), Err(ConfigError::Stage { .. })));
        assert!(matches!(
            PipelineConfig::from_toml("[[stage]]\nkind = \"bloom\"\n"),
            Err(ConfigError::UnknownKind { .. })
        ));
    }

    #[test]
    fn references_must_resolve() {
        let bad = "[[stage]]\nkind = \"score\"\nscore = \"similarity\"\nbackend = \"nope\"\n";
        assert!(matches!(PipelineConfig::from_toml(bad), Err(ConfigError::UnknownBackend { .. })));
        let dup = "[[stage]]\nkind = \"length\"\n[[stage]]\nkind = \"length\"\n";
        assert!(matches!(PipelineConfig::from_toml(dup), Err(ConfigError::DuplicateName(_))));
    }

    #[test]
    fn overrides_apply_after_file() {
        let o = |k: &str, v: &str| (k.to_string(), v.to_string());
        let c = PipelineConfig::from_toml_with(
            SMALL,
            &[o("stage.similarity.threshold", "0.75"), o("on_scorer_error", "keep-pair"), o("backends.sim.seed", "9")],
        )
        .unwrap();
        let StageKind::Score(p) = &c.stages[1].kind else { panic!() };
        assert_eq!(p.threshold, Some(0.75));
        assert_eq!(c.on_scorer_error, OnScorerError::KeepPair);
        assert_eq!(c.backends["sim"].seed, 9);
        assert!(PipelineConfig::from_toml_with(SMALL, &[o("stage.nope.min", "1")]).is_err());
        assert!(PipelineConfig::from_toml_with(SMALL, &[o("workerz", "1")]).is_err());
    }

    #[test]
    fn serialization_round_trips() {
        let c = PipelineConfig::from_toml(SMALL).unwrap();
        let back = PipelineConfig::from_toml(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.fingerprint(), c.fingerprint());
    }

    #[test]
    fn order_warnings() {
        let c = PipelineConfig::from_toml(SMALL).unwrap();
        assert!(validate_order(&c).is_empty());
        let mut rev = c.clone();
        rev.stages.reverse();
        assert_eq!(validate_order(&rev).len(), 1);
        let only_heuristic =
            PipelineConfig { stages: vec![StageSpec::new(StageKind::Length(Default::default()))], ..c };
        assert!(validate_order(&only_heuristic).is_empty());
    }
}
