//! Scorer gateway: one abstraction for every model-backed judgment.
//!
//! A [`Backend`] answers batches of [`ScoreRequest`]s. In-process stubs and
//! out-of-process adapters both implement it; [`BackendHandle`] adds the
//! typed operations on top, gates them on the advertised op set, and pairs
//! responses back to requests by id.

pub mod adapter;
pub mod conformance;
pub mod protocol;
pub mod stub;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adapter::{attach_adapter, Adapter, Transport};
pub use protocol::{Handshake, Op, Payload, ScoreRequest, ScoreResponse, PROTOCOL};
pub use stub::{StubBackend, StubKind, StubSpec};

use crate::model::{PairId, ScoreKind, MT_PROB};

/// Default per-batch timeout for adapters.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// Environment variable naming the directory searched for adapters
/// referenced by name.
pub const ADAPTER_DIR_ENV: &str = "BITEXTKIT_ADAPTER_DIR";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("backend `{backend}` does not advertise op `{op}`")]
    OpNotAdvertised { backend: String, op: Op },
    #[error("backend `{backend}`: {message}")]
    Backend { backend: String, message: String },
    #[error("backend `{backend}` protocol error: {message}")]
    Protocol { backend: String, message: String },
    #[error("backend `{backend}` crashed: {message}")]
    Crashed { backend: String, message: String },
    #[error("backend `{backend}` timed out after {secs:.1}s")]
    Timeout { backend: String, secs: f64 },
    #[error("backend `{backend}` returned {kind}={value} outside [{min}, {max}]")]
    OutOfRange { backend: String, kind: String, value: f64, min: f64, max: f64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cannot attach backend: {0}")]
    Attach(String),
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),
}

/// Anything that can answer a batch of requests.
///
/// Responses may come back in any order; they are paired by id.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn ops(&self) -> BTreeSet<Op>;
    fn exchange(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>, GatewayError>;
}

/// Top-1 language prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub lang: String,
    pub confidence: f64,
}

/// Shared, cloneable handle to an attached backend.
#[derive(Clone)]
pub struct BackendHandle(Arc<dyn Backend>);

impl fmt::Debug for BackendHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BackendHandle({})", self.0.name())
    }
}

impl BackendHandle {
    pub fn new(backend: impl Backend + 'static) -> Self {
        BackendHandle(Arc::new(backend))
    }

    pub fn stub(spec: StubSpec) -> Self {
        BackendHandle::new(StubBackend::new(spec))
    }

    pub fn name(&self) -> &str {
        self.0.name()
    }

    pub fn ops(&self) -> BTreeSet<Op> {
        self.0.ops()
    }

    pub fn supports(&self, op: Op) -> bool {
        self.0.ops().contains(&op)
    }

    fn protocol_error(&self, message: impl Into<String>) -> GatewayError {
        GatewayError::Protocol { backend: self.name().to_string(), message: message.into() }
    }

    /// Sends `requests` (ids are reassigned to their positions) and returns
    /// one result per request, in request order. Requests for ops the backend
    /// never advertised fail locally and are not sent.
    pub fn call(&self, mut requests: Vec<ScoreRequest>) -> Vec<Result<Payload, GatewayError>> {
        let ops = self.0.ops();
        let mut results: Vec<Option<Result<Payload, GatewayError>>> = vec![None; requests.len()];
        let mut outgoing = Vec::with_capacity(requests.len());
        for (i, mut req) in requests.drain(..).enumerate() {
            if !ops.contains(&req.op) {
                results[i] = Some(Err(GatewayError::OpNotAdvertised { backend: self.name().to_string(), op: req.op }));
                continue;
            }
            if let Err(e) = req.validate() {
                results[i] = Some(Err(GatewayError::InvalidRequest(e)));
                continue;
            }
            req.id = i as u64;
            outgoing.push(req);
        }
        if !outgoing.is_empty() {
            match self.0.exchange(&outgoing) {
                Err(e) => {
                    for req in &outgoing {
                        results[req.id as usize] = Some(Err(e.clone()));
                    }
                }
                Ok(responses) => {
                    let pending: HashMap<i64, usize> = outgoing.iter().map(|r| (r.id as i64, r.id as usize)).collect();
                    for response in responses {
                        let Some(&slot) = pending.get(&response.id) else {
                            log::warn!("backend {} answered unknown id {}", self.name(), response.id);
                            continue;
                        };
                        if results[slot].is_some() {
                            results[slot] =
                                Some(Err(self.protocol_error(format!("duplicate response for id {}", response.id))));
                            continue;
                        }
                        results[slot] = Some(match response.payload {
                            Payload::Error(message) => {
                                Err(GatewayError::Backend { backend: self.name().to_string(), message })
                            }
                            payload => Ok(payload),
                        });
                    }
                }
            }
        }
        results
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.unwrap_or_else(|| Err(self.protocol_error(format!("no response for id {i}")))))
            .collect()
    }

    /// Scores `(id, src, tgt)` triples for `kind`; results keep batch order.
    /// Kinds that judge the target alone (`mt_prob`) go out as `score_text`
    /// with the target text.
    pub fn score_pairs(
        &self,
        batch: &[(PairId, &str, &str)],
        kind: &ScoreKind,
    ) -> Vec<(PairId, Result<f64, GatewayError>)> {
        let requests = batch
            .iter()
            .map(|&(_, src, tgt)| {
                if kind.name == MT_PROB {
                    ScoreRequest::score_text(0, tgt)
                } else {
                    ScoreRequest::score_pair(0, src, tgt)
                }
            })
            .collect();
        let results = self.call(requests);
        batch
            .iter()
            .zip(results)
            .map(|(&(id, _, _), result)| {
                let score = result.and_then(|payload| match payload {
                    Payload::Score(v) if kind.contains(v) => Ok(v),
                    Payload::Score(v) => Err(GatewayError::OutOfRange {
                        backend: self.name().to_string(),
                        kind: kind.name.clone(),
                        value: v,
                        min: kind.min,
                        max: kind.max,
                    }),
                    other => Err(self.protocol_error(format!("expected a score, got {other:?}"))),
                });
                (id, score)
            })
            .collect()
    }

    pub fn detect_language(&self, texts: &[&str]) -> Vec<Result<Detection, GatewayError>> {
        let requests = texts.iter().map(|t| ScoreRequest::detect_lang(0, t)).collect();
        self.call(requests)
            .into_iter()
            .map(|r| {
                r.and_then(|payload| match payload {
                    Payload::Lang { lang, confidence } => Ok(Detection { lang, confidence }),
                    other => Err(self.protocol_error(format!("expected a language, got {other:?}"))),
                })
            })
            .collect()
    }

    /// `n` hypotheses per source, best first.
    pub fn translate_batch(&self, sources: &[&str], n: usize, beam: usize) -> Vec<Result<Vec<String>, GatewayError>> {
        if n == 0 || beam < n {
            let e = GatewayError::InvalidRequest(format!("translate needs 1 <= n <= beam, got n={n} beam={beam}"));
            return sources.iter().map(|_| Err(e.clone())).collect();
        }
        let requests = sources.iter().map(|s| ScoreRequest::translate(0, s, n as u32, beam as u32)).collect();
        self.call(requests)
            .into_iter()
            .map(|r| {
                r.and_then(|payload| match payload {
                    Payload::Hyps(h) if h.len() == n => Ok(h),
                    Payload::Hyps(h) => Err(self.protocol_error(format!("asked for {n} hypotheses, got {}", h.len()))),
                    other => Err(self.protocol_error(format!("expected hypotheses, got {other:?}"))),
                })
            })
            .collect()
    }

    pub fn translate(&self, source: &str, n: usize, beam: usize) -> Result<Vec<String>, GatewayError> {
        self.translate_batch(&[source], n, beam).pop().expect("one result")
    }

    pub fn correct_batch(&self, texts: &[&str]) -> Vec<Result<String, GatewayError>> {
        let requests = texts.iter().map(|t| ScoreRequest::correct(0, t)).collect();
        self.call(requests)
            .into_iter()
            .map(|r| {
                r.and_then(|payload| match payload {
                    Payload::Text(t) => Ok(t),
                    other => Err(self.protocol_error(format!("expected text, got {other:?}"))),
                })
            })
            .collect()
    }

    pub fn correct(&self, text: &str) -> Result<String, GatewayError> {
        self.correct_batch(&[text]).pop().expect("one result")
    }
}

/// How to reach a backend, as written in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    /// In-process stub kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stub: Option<StubKind>,
    #[serde(default)]
    pub seed: u64,
    /// Child process command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
    /// Adapter executable looked up in the adapter directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<String>,
    /// `host:port` of a socket adapter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub address: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<f64>,
}

impl BackendSpec {
    pub fn stub(kind: StubKind, seed: u64) -> Self {
        BackendSpec { stub: Some(kind), seed, command: None, adapter: None, address: None, timeout_secs: None }
    }

    /// Attaches the backend described by this spec under `name`.
    pub fn attach(&self, name: &str) -> Result<BackendHandle, GatewayError> {
        let set = [self.stub.is_some(), self.command.is_some(), self.adapter.is_some(), self.address.is_some()];
        if set.iter().filter(|&&b| b).count() != 1 {
            return Err(GatewayError::Attach(format!(
                "backend `{name}` needs exactly one of `stub`, `command`, `adapter`, `address`"
            )));
        }
        let timeout = self.timeout_secs.map(Duration::from_secs_f64).unwrap_or(DEFAULT_TIMEOUT);
        if let Some(kind) = self.stub {
            return Ok(BackendHandle::new(StubBackend::named(name, StubSpec { kind, seed: self.seed })));
        }
        let transport = if let Some(cmd) = &self.command {
            Transport::Command(cmd.clone())
        } else if let Some(addr) = &self.address {
            Transport::Tcp(addr.clone())
        } else {
            let adapter = self.adapter.as_ref().expect("checked above");
            let dir = std::env::var_os(ADAPTER_DIR_ENV).map(PathBuf::from).ok_or_else(|| {
                GatewayError::Attach(format!("adapter `{adapter}` requested but {ADAPTER_DIR_ENV} is unset"))
            })?;
            Transport::Command(vec![dir.join(adapter).to_string_lossy().into_owned()])
        };
        Ok(BackendHandle::new(attach_adapter(name, &transport, timeout)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScoreKindRegistry;
    use std::sync::Mutex;

    /// Answers in reverse order, optionally dropping one id or erroring.
    struct Scrambler {
        inner: StubBackend,
        drop_id: Option<u64>,
        log: Mutex<Vec<usize>>,
    }

    impl Backend for Scrambler {
        fn name(&self) -> &str {
            "scrambler"
        }
        fn ops(&self) -> BTreeSet<Op> {
            self.inner.ops()
        }
        fn exchange(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>, GatewayError> {
            self.log.lock().unwrap().push(requests.len());
            let mut out = self.inner.exchange(requests)?;
            out.reverse();
            out.retain(|r| Some(r.id as u64) != self.drop_id);
            Ok(out)
        }
    }

    fn sim_kind() -> ScoreKind {
        ScoreKindRegistry::default().get("similarity").unwrap().clone()
    }

    #[test]
    fn empty_batch_is_empty() {
        let h = BackendHandle::stub(StubSpec { kind: StubKind::Similarity, seed: 0 });
        assert!(h.score_pairs(&[], &sim_kind()).is_empty());
    }

    #[test]
    fn reversed_responses_pair_by_id() {
        let batch = [(10, "abcd", "abcd"), (11, "abcd", "wxyz"), (12, "hello there", "hello where")];
        let plain = BackendHandle::stub(StubSpec { kind: StubKind::Similarity, seed: 0 });
        let scrambled = BackendHandle::new(Scrambler {
            inner: StubBackend::new(StubSpec { kind: StubKind::Similarity, seed: 0 }),
            drop_id: None,
            log: Mutex::new(vec![]),
        });
        let a = plain.score_pairs(&batch, &sim_kind());
        let b = scrambled.score_pairs(&batch, &sim_kind());
        assert_eq!(a, b);
        assert_eq!(a[0], (10, Ok(1.0)));
        assert_eq!(a[1], (11, Ok(0.0)));
    }

    #[test]
    fn missing_response_is_a_per_id_error() {
        let h = BackendHandle::new(Scrambler {
            inner: StubBackend::new(StubSpec { kind: StubKind::Similarity, seed: 0 }),
            drop_id: Some(1),
            log: Mutex::new(vec![]),
        });
        let out = h.score_pairs(&[(0, "a", "a"), (1, "b", "b")], &sim_kind());
        assert!(out[0].1.is_ok());
        assert!(matches!(out[1].1, Err(GatewayError::Protocol { .. })));
    }

    #[test]
    fn unadvertised_op_never_sent() {
        let scrambler = Scrambler {
            inner: StubBackend::new(StubSpec { kind: StubKind::Similarity, seed: 0 }),
            drop_id: None,
            log: Mutex::new(vec![]),
        };
        let h = BackendHandle::new(scrambler);
        let r = h.correct("text");
        assert!(matches!(r, Err(GatewayError::OpNotAdvertised { op: Op::Correct, .. })));
        assert!(matches!(h.translate("x", 1, 1), Err(GatewayError::OpNotAdvertised { .. })));
    }

    #[test]
    fn translate_checks_hypothesis_count() {
        let h = BackendHandle::stub(StubSpec { kind: StubKind::Translator, seed: 3 });
        assert_eq!(h.translate("The cat sat on the mat.", 5, 12).unwrap().len(), 5);
        assert_eq!(h.translate("The cat sat.", 1, 1).unwrap().len(), 1);
        assert!(matches!(h.translate("x", 5, 4), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn spec_requires_exactly_one_transport() {
        let mut spec = BackendSpec::stub(StubKind::Similarity, 0);
        spec.command = Some(vec!["true".into()]);
        assert!(matches!(spec.attach("x"), Err(GatewayError::Attach(_))));
        assert!(BackendSpec::stub(StubKind::LangId, 0).attach("x").is_ok());
    }
}
