//! The `pairscore/1` wire protocol.
//!
//! Line-delimited JSON, UTF-8, one object per `\n`-terminated line in each
//! direction. The adapter speaks first with a handshake:
//!
//! ```text
//! {"protocol":"pairscore/1","ops":["score_pair","detect_lang"]}
//! ```
//!
//! after which every request line is answered by exactly one response line
//! carrying the same `id`, flushed immediately. Responses may come back in
//! any order. EOF on the adapter's input means shutdown.
//!
//! Request fields per op:
//!
//! | op          | fields                  |
//! |-------------|-------------------------|
//! | score_pair  | src, tgt                |
//! | score_text  | src (the text to score) |
//! | detect_lang | src                     |
//! | translate   | src, n, beam            |
//! | correct     | src                     |
//!
//! A response carries exactly one payload: `score`, `lang`+`confidence`,
//! `hyps`, `text` or `error`. A request line that cannot be parsed is
//! answered with `{"id":-1,"error":...}` unless an id could be recovered.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

pub const PROTOCOL: &str = "pairscore/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    ScorePair,
    ScoreText,
    DetectLang,
    Translate,
    Correct,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::ScorePair => "score_pair",
            Op::ScoreText => "score_text",
            Op::DetectLang => "detect_lang",
            Op::Translate => "translate",
            Op::Correct => "correct",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Handshake {
    pub protocol: String,
    pub ops: BTreeSet<Op>,
}

impl Handshake {
    pub fn new(ops: impl IntoIterator<Item = Op>) -> Self {
        Handshake { protocol: PROTOCOL.to_string(), ops: ops.into_iter().collect() }
    }

    /// Parses and validates a handshake line; the error quotes the line.
    pub fn parse(line: &str) -> Result<Self, String> {
        let hs: Handshake =
            serde_json::from_str(line.trim_end()).map_err(|e| format!("bad handshake {line:?}: {e}"))?;
        if hs.protocol != PROTOCOL {
            return Err(format!("bad handshake {line:?}: protocol `{}` is not `{PROTOCOL}`", hs.protocol));
        }
        Ok(hs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub id: u64,
    pub op: Op,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tgt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam: Option<u32>,
}

impl ScoreRequest {
    fn bare(id: u64, op: Op, src: &str) -> Self {
        ScoreRequest { id, op, src: Some(src.to_string()), tgt: None, n: None, beam: None }
    }

    pub fn score_pair(id: u64, src: &str, tgt: &str) -> Self {
        ScoreRequest { tgt: Some(tgt.to_string()), ..Self::bare(id, Op::ScorePair, src) }
    }

    pub fn score_text(id: u64, text: &str) -> Self {
        Self::bare(id, Op::ScoreText, text)
    }

    pub fn detect_lang(id: u64, text: &str) -> Self {
        Self::bare(id, Op::DetectLang, text)
    }

    pub fn translate(id: u64, src: &str, n: u32, beam: u32) -> Self {
        ScoreRequest { n: Some(n), beam: Some(beam), ..Self::bare(id, Op::Translate, src) }
    }

    pub fn correct(id: u64, text: &str) -> Self {
        Self::bare(id, Op::Correct, text)
    }

    /// Checks that the fields the op needs are present and sane.
    pub fn validate(&self) -> Result<(), String> {
        let need_src = || self.src.as_ref().map(|_| ()).ok_or_else(|| format!("{} needs `src`", self.op));
        match self.op {
            Op::ScorePair => {
                need_src()?;
                self.tgt.as_ref().ok_or("score_pair needs `tgt`")?;
            }
            Op::ScoreText | Op::DetectLang | Op::Correct => need_src()?,
            Op::Translate => {
                need_src()?;
                let n = self.n.ok_or("translate needs `n`")?;
                let beam = self.beam.ok_or("translate needs `beam`")?;
                if n == 0 || beam < n {
                    return Err(format!("translate needs 1 <= n <= beam, got n={n} beam={beam}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Score(f64),
    Lang { lang: String, confidence: f64 },
    Hyps(Vec<String>),
    Text(String),
    Error(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreResponse {
    pub id: i64,
    pub payload: Payload,
}

impl ScoreResponse {
    pub fn error(id: i64, message: impl Into<String>) -> Self {
        ScoreResponse { id, payload: Payload::Error(message.into()) }
    }
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawResponse {
    id: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lang: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hyps: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl Serialize for ScoreResponse {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut raw = RawResponse { id: self.id, ..Default::default() };
        match &self.payload {
            Payload::Score(v) => raw.score = Some(*v),
            Payload::Lang { lang, confidence } => {
                raw.lang = Some(lang.clone());
                raw.confidence = Some(*confidence);
            }
            Payload::Hyps(h) => raw.hyps = Some(h.clone()),
            Payload::Text(t) => raw.text = Some(t.clone()),
            Payload::Error(e) => raw.error = Some(e.clone()),
        }
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ScoreResponse {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = RawResponse::deserialize(d)?;
        let mut payloads = Vec::with_capacity(1);
        if let Some(v) = raw.score {
            payloads.push(Payload::Score(v));
        }
        match (raw.lang, raw.confidence) {
            (Some(lang), Some(confidence)) => payloads.push(Payload::Lang { lang, confidence }),
            (None, None) => {}
            _ => return Err(D::Error::custom("`lang` and `confidence` must appear together")),
        }
        if let Some(h) = raw.hyps {
            payloads.push(Payload::Hyps(h));
        }
        if let Some(t) = raw.text {
            payloads.push(Payload::Text(t));
        }
        if let Some(e) = raw.error {
            payloads.push(Payload::Error(e));
        }
        if payloads.len() != 1 {
            return Err(D::Error::custom(format!("expected exactly one payload, found {}", payloads.len())));
        }
        Ok(ScoreResponse { id: raw.id, payload: payloads.pop().expect("one payload") })
    }
}

/// Encodes one message as a single `\n`-terminated line.
pub fn encode_line<T: Serialize>(message: &T) -> String {
    let mut line = serde_json::to_string(message).expect("protocol messages always serialize");
    line.push('\n');
    line
}

/// Something that can answer requests in-process; `serve` exposes it over
/// the wire.
pub trait Responder {
    fn ops(&self) -> BTreeSet<Op>;
    fn respond(&self, request: &ScoreRequest) -> Payload;
}

/// Runs the adapter side of the protocol until EOF on `input`.
pub fn serve<R: BufRead, W: Write>(responder: &dyn Responder, input: R, mut output: W) -> io::Result<()> {
    let ops = responder.ops();
    output.write_all(encode_line(&Handshake::new(ops.iter().copied())).as_bytes())?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = answer_line(responder, &ops, &line);
        output.write_all(encode_line(&response).as_bytes())?;
        output.flush()?;
    }
    Ok(())
}

/// Answers one request line; malformed lines get an error response.
pub fn answer_line(responder: &dyn Responder, ops: &BTreeSet<Op>, line: &str) -> ScoreResponse {
    let request: ScoreRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(|id| id.as_i64()))
                .unwrap_or(-1);
            return ScoreResponse::error(id, format!("malformed request: {e}"));
        }
    };
    let id = request.id as i64;
    if !ops.contains(&request.op) {
        return ScoreResponse::error(id, format!("op `{}` not supported", request.op));
    }
    if let Err(e) = request.validate() {
        return ScoreResponse::error(id, e);
    }
    ScoreResponse { id, payload: responder.respond(&request) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_wire_shape() {
        let line = encode_line(&ScoreRequest::score_pair(3, "a", "b"));
        assert_eq!(line, "{\"id\":3,\"op\":\"score_pair\",\"src\":\"a\",\"tgt\":\"b\"}\n");
        let line = encode_line(&ScoreRequest::translate(1, "x", 5, 12));
        assert_eq!(line, "{\"id\":1,\"op\":\"translate\",\"src\":\"x\",\"n\":5,\"beam\":12}\n");
    }

    #[test]
    fn response_payloads_round_trip() {
        for payload in [
            Payload::Score(0.25),
            Payload::Lang { lang: "is".into(), confidence: 1.0 },
            Payload::Hyps(vec!["a".into(), "b".into()]),
            Payload::Text("t".into()),
            Payload::Error("boom".into()),
        ] {
            let r = ScoreResponse { id: 4, payload };
            let back: ScoreResponse = serde_json::from_str(encode_line(&r).trim_end()).unwrap();
            assert_eq!(back, r);
        }
    }

    #[test]
    fn response_needs_exactly_one_payload() {
        assert!(serde_json::from_str::<ScoreResponse>(r#"{"id":1}"#).is_err());
        assert!(serde_json::from_str::<ScoreResponse>(r#"{"id":1,"score":0.1,"text":"x"}"#).is_err());
        assert!(serde_json::from_str::<ScoreResponse>(r#"{"id":1,"lang":"is"}"#).is_err());
        assert!(serde_json::from_str::<ScoreResponse>(r#"{"id":1,"score":0.1,"extra":1}"#).is_err());
    }

    #[test]
    fn handshake_validation() {
        let hs = Handshake::parse(r#"{"protocol":"pairscore/1","ops":["score_pair"]}"#).unwrap();
        assert_eq!(hs.ops.into_iter().collect::<Vec<_>>(), vec![Op::ScorePair]);
        let err = Handshake::parse(r#"{"protocol":"pairscore/2","ops":[]}"#).unwrap_err();
        assert!(err.contains("pairscore/2"), "{err}");
        assert!(Handshake::parse("hello").is_err());
    }

    #[test]
    fn request_validation() {
        assert!(ScoreRequest::translate(0, "x", 5, 12).validate().is_ok());
        assert!(ScoreRequest::translate(0, "x", 5, 4).validate().is_err());
        assert!(ScoreRequest::translate(0, "x", 0, 4).validate().is_err());
        let mut r = ScoreRequest::score_pair(0, "a", "b");
        r.tgt = None;
        assert!(r.validate().is_err());
    }

    struct Echo;
    impl Responder for Echo {
        fn ops(&self) -> BTreeSet<Op> {
            [Op::Correct].into_iter().collect()
        }
        fn respond(&self, request: &ScoreRequest) -> Payload {
            Payload::Text(request.src.clone().unwrap_or_default())
        }
    }

    #[test]
    fn serve_handshakes_then_answers_each_line() {
        let input = "{\"id\":1,\"op\":\"correct\",\"src\":\"x\"}\nnot json\n{\"id\":2,\"op\":\"translate\",\"src\":\"x\",\"n\":1,\"beam\":1}\n";
        let mut out = Vec::new();
        serve(&Echo, input.as_bytes(), &mut out).unwrap();
        let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
        assert_eq!(lines[0], r#"{"protocol":"pairscore/1","ops":["correct"]}"#);
        assert_eq!(lines[1], r#"{"id":1,"text":"x"}"#);
        assert!(lines[2].starts_with(r#"{"id":-1,"error":"malformed request"#));
        assert!(lines[3].starts_with(r#"{"id":2,"error":"op `translate` not supported"#));
        assert_eq!(lines.len(), 4);
    }
}
