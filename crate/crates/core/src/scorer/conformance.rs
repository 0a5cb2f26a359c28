//! Conformance checks for `pairscore/1` adapters.
//!
//! Runs against a fresh connection and talks raw lines, so it can send
//! deliberately broken input. Each check is reported separately; a failed
//! check does not stop the later ones unless the link is gone.

use std::collections::HashSet;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::Deserialize;

use super::adapter::{read_handshake, Connection, Recv, Transport};
use super::protocol::{encode_line, Handshake, Op, Payload, ScoreRequest, ScoreResponse};
use super::GatewayError;

/// One line of the loopback fixture.
#[derive(Debug, Clone, Deserialize)]
pub struct LoopbackCase {
    pub seed: u64,
    pub src: String,
    pub tgt: String,
    pub score: f64,
}

pub fn load_loopback_fixture(path: &Path) -> Result<Vec<LoopbackCase>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct ConformanceReport {
    pub checks: Vec<Check>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn record(&mut self, name: &'static str, result: Result<String, String>) -> bool {
        let passed = result.is_ok();
        let detail = result.unwrap_or_else(|e| e);
        self.checks.push(Check { name, passed, detail });
        passed
    }
}

impl std::fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {:<14} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ConformanceOptions {
    pub timeout: Duration,
    /// Fixture cases to replay when the adapter is a loopback scorer; only
    /// cases with this seed are sent.
    pub loopback: Option<(u64, Vec<LoopbackCase>)>,
}

impl Default for ConformanceOptions {
    fn default() -> Self {
        ConformanceOptions { timeout: Duration::from_secs(10), loopback: None }
    }
}

fn probe_request(ops: &HashSet<Op>, id: u64, salt: usize) -> Option<ScoreRequest> {
    let text = format!("probe sentence number {salt}.");
    let op = [Op::ScorePair, Op::ScoreText, Op::DetectLang, Op::Correct, Op::Translate]
        .into_iter()
        .find(|op| ops.contains(op))?;
    Some(match op {
        Op::ScorePair => ScoreRequest::score_pair(id, &text, "prófunarsetning"),
        Op::ScoreText => ScoreRequest::score_text(id, &text),
        Op::DetectLang => ScoreRequest::detect_lang(id, &text),
        Op::Correct => ScoreRequest::correct(id, &text),
        Op::Translate => ScoreRequest::translate(id, &text, 1, 1),
    })
}

fn recv_response(conn: &mut Connection, deadline: Instant) -> Result<ScoreResponse, String> {
    match conn.recv_until(deadline) {
        Recv::Line(l) => serde_json::from_str(&l).map_err(|e| format!("bad response line {l:?}: {e}")),
        Recv::Timeout => Err("timed out waiting for a response".into()),
        Recv::Eof => Err("adapter closed its output".into()),
        Recv::Failed(e) => Err(e),
    }
}

/// Connects to the adapter and runs every check.
pub fn run_conformance(transport: &Transport, options: &ConformanceOptions) -> Result<ConformanceReport, GatewayError> {
    let mut conn = Connection::open(transport)?;
    let mut report = ConformanceReport::default();
    let timeout = options.timeout;

    let handshake: Handshake = match read_handshake(&mut conn, timeout) {
        Ok(h) => h,
        Err(e) => {
            report.record("handshake", Err(e.to_string()));
            return Ok(report);
        }
    };
    let ops: HashSet<Op> = handshake.ops.iter().copied().collect();
    report.record("handshake", Ok(format!("ops {:?}", handshake.ops)));

    // One request at a time: an adapter that buffers its output never
    // answers and the wait times out.
    let flush = (|| {
        for i in 0..3u64 {
            let req = probe_request(&ops, 100 + i, i as usize).ok_or("adapter advertises no ops")?;
            conn.send_line(&encode_line(&req)).map_err(|e| e.to_string())?;
            let resp = recv_response(&mut conn, Instant::now() + timeout)?;
            if resp.id != req.id as i64 {
                return Err(format!("sent id {}, got id {}", req.id, resp.id));
            }
        }
        Ok("each line answered before the next was sent".to_string())
    })();
    if !report.record("flush", flush) {
        return Ok(report);
    }

    let pairing = (|| {
        let ids: Vec<u64> = vec![907, 3, 55, 12, 4000, 8, 77, 1];
        for (k, &id) in ids.iter().enumerate() {
            let req = probe_request(&ops, id, k).expect("ops checked above");
            conn.send_line(&encode_line(&req)).map_err(|e| e.to_string())?;
        }
        let deadline = Instant::now() + timeout;
        let mut seen = HashSet::new();
        for _ in &ids {
            let resp = recv_response(&mut conn, deadline)?;
            if !ids.contains(&(resp.id as u64)) || resp.id < 0 {
                return Err(format!("response carries unknown id {}", resp.id));
            }
            if !seen.insert(resp.id) {
                return Err(format!("id {} answered twice", resp.id));
            }
        }
        Ok(format!("{} interleaved ids answered exactly once", ids.len()))
    })();
    report.record("id-pairing", pairing);

    let errors = (|| {
        conn.send_line("this is not json").map_err(|e| e.to_string())?;
        let resp = recv_response(&mut conn, Instant::now() + timeout)?;
        if resp.id != -1 || !matches!(resp.payload, Payload::Error(_)) {
            return Err(format!("malformed line answered with {resp:?}"));
        }
        let unsupported = [Op::ScorePair, Op::ScoreText, Op::DetectLang, Op::Translate, Op::Correct]
            .into_iter()
            .find(|op| !ops.contains(op));
        if let Some(op) = unsupported {
            let mut req = ScoreRequest::score_pair(31337, "a", "b");
            req.op = op;
            req.n = Some(1);
            req.beam = Some(1);
            conn.send_line(&encode_line(&req)).map_err(|e| e.to_string())?;
            let resp = recv_response(&mut conn, Instant::now() + timeout)?;
            if resp.id != 31337 || !matches!(resp.payload, Payload::Error(_)) {
                return Err(format!("unsupported op `{op}` answered with {resp:?}"));
            }
        }
        Ok("malformed line and unsupported op both answered with errors".to_string())
    })();
    report.record("errors", errors);

    if let Some((seed, cases)) = &options.loopback {
        let loopback = (|| {
            if !ops.contains(&Op::ScorePair) {
                return Err("loopback replay needs score_pair".to_string());
            }
            let cases: Vec<&LoopbackCase> = cases.iter().filter(|c| c.seed == *seed).collect();
            for (i, case) in cases.iter().enumerate() {
                let req = ScoreRequest::score_pair(i as u64, &case.src, &case.tgt);
                conn.send_line(&encode_line(&req)).map_err(|e| e.to_string())?;
            }
            let deadline = Instant::now() + timeout;
            for _ in &cases {
                let resp = recv_response(&mut conn, deadline)?;
                let case = usize::try_from(resp.id)
                    .ok()
                    .and_then(|i| cases.get(i))
                    .ok_or_else(|| format!("unknown id {}", resp.id))?;
                match resp.payload {
                    Payload::Score(v) if v.to_bits() == case.score.to_bits() => {}
                    other => {
                        return Err(format!(
                            "case {} ({:?}, {:?}): expected {}, got {other:?}",
                            resp.id, case.src, case.tgt, case.score
                        ))
                    }
                }
            }
            Ok(format!("{} fixture scores match bit for bit", cases.len()))
        })();
        report.record("loopback", loopback);
    }

    conn.close_input();
    let eof = match conn.recv_until(Instant::now() + timeout) {
        Recv::Eof => {
            if conn.is_process() {
                match conn.wait_exit(timeout) {
                    Some(s) if s.success() => Ok("exited 0 on EOF".to_string()),
                    Some(s) => Err(format!("exited with {s} on EOF")),
                    None => Err("still running after EOF".to_string()),
                }
            } else {
                Ok("closed the connection on EOF".to_string())
            }
        }
        Recv::Line(l) => Err(format!("unexpected output after EOF: {l:?}")),
        Recv::Timeout => Err("did not close its output after EOF".to_string()),
        Recv::Failed(e) => Err(e),
    };
    report.record("clean-eof", eof);
    Ok(report)
}
