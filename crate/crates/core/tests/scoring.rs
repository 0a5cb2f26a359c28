use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bitextkit::model::{ScoreKindRegistry, SIMILARITY};
use bitextkit::scorer::conformance::load_loopback_fixture;
use bitextkit::scorer::protocol::encode_line;
use bitextkit::scorer::stub::loopback_score;
use bitextkit::scorer::{
    Backend, BackendHandle, GatewayError, Op, ScoreRequest, ScoreResponse, StubBackend, StubKind, StubSpec,
};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn loopback_matches_fixture_bit_exactly() {
    let cases = load_loopback_fixture(&fixture("loopback_fixture.jsonl")).unwrap();
    assert_eq!(cases.len(), 1_000);
    for c in &cases {
        assert_eq!(loopback_score(c.seed, &c.src, &c.tgt).to_bits(), c.score.to_bits(), "{c:?}");
    }

    // The same through the gateway, batched per seed.
    let kind = ScoreKindRegistry::default().get(SIMILARITY).unwrap().clone();
    let mut by_seed: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, c) in cases.iter().enumerate() {
        by_seed.entry(c.seed).or_default().push(i);
    }
    for (seed, idx) in by_seed {
        let handle = BackendHandle::stub(StubSpec { kind: StubKind::Loopback, seed });
        let batch: Vec<(u64, &str, &str)> =
            idx.iter().map(|&i| (i as u64, cases[i].src.as_str(), cases[i].tgt.as_str())).collect();
        for (id, score) in handle.score_pairs(&batch, &kind) {
            assert_eq!(score.unwrap().to_bits(), cases[id as usize].score.to_bits());
        }
    }
}

const GOLDEN_INPUTS: &[(&str, &str)] = &[
    ("The ship sailed north.", "Skipið sigldi norður."),
    ("He said \"hello\" twice.", "Hann sagði „halló“ tvisvar."),
    ("", ""),
    ("Visit #Reykjavik  today 😀", "Heimsæktu #Reykjavik í dag 😀"),
    ("one one one one", "einn einn einn einn"),
    ("Numbers 1, 2 and 3.", "Tölur 1, 2 og 3."),
];

fn request_for(op: Op, id: u64, src: &str, tgt: &str) -> ScoreRequest {
    match op {
        Op::ScorePair => ScoreRequest::score_pair(id, src, tgt),
        Op::ScoreText => ScoreRequest::score_text(id, tgt),
        Op::DetectLang => ScoreRequest::detect_lang(id, src),
        Op::Translate => ScoreRequest::translate(id, src, 3, 5),
        Op::Correct => ScoreRequest::correct(id, src),
    }
}

/// Every stub answers fixed inputs exactly as recorded. Set
/// `BITEXTKIT_BLESS=1` to rewrite the golden file after a deliberate change.
#[test]
fn stubs_match_golden_outputs() {
    let mut text = String::new();
    for kind in StubKind::ALL {
        for seed in [0, 7] {
            let stub = StubBackend::new(StubSpec { kind, seed });
            for op in kind.ops() {
                let requests: Vec<ScoreRequest> =
                    GOLDEN_INPUTS.iter().enumerate().map(|(i, (s, t))| request_for(op, i as u64, s, t)).collect();
                let responses = stub.exchange(&requests).unwrap();
                for (req, resp) in requests.iter().zip(responses) {
                    let line = serde_json::json!({
                        "stub": kind.as_str(),
                        "seed": seed,
                        "request": serde_json::from_str::<serde_json::Value>(&encode_line(req)).unwrap(),
                        "response": serde_json::from_str::<serde_json::Value>(&encode_line(&resp)).unwrap(),
                    });
                    text.push_str(&line.to_string());
                    text.push('\n');
                }
            }
        }
    }
    let path = fixture("stub_golden.jsonl");
    if std::env::var_os("BITEXTKIT_BLESS").is_some() {
        std::fs::write(&path, &text).unwrap();
    }
    let golden = std::fs::read_to_string(&path).unwrap();
    for (i, (got, want)) in text.lines().zip(golden.lines()).enumerate() {
        assert_eq!(got, want, "golden line {}", i + 1);
    }
    assert_eq!(text.lines().count(), golden.lines().count());
}

/// Answers every batch in a seeded random order.
struct Permuting {
    inner: StubBackend,
    rng: Mutex<ChaCha8Rng>,
}

impl Backend for Permuting {
    fn name(&self) -> &str {
        "permuting"
    }
    fn ops(&self) -> std::collections::BTreeSet<Op> {
        Backend::ops(&self.inner)
    }
    fn exchange(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>, GatewayError> {
        let mut out = self.inner.exchange(requests)?;
        out.shuffle(&mut *self.rng.lock().unwrap());
        Ok(out)
    }
}

fn text() -> impl Strategy<Value = String> {
    "[a-záðþ .,\"]{0,24}"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batching_is_transparent(
        texts in prop::collection::vec((text(), text()), 0..60),
        cuts in prop::collection::vec(any::<prop::sample::Index>(), 0..6),
        kind in prop::sample::select(vec![StubKind::Similarity, StubKind::CrossLikelihood, StubKind::Qe, StubKind::MtProb]),
    ) {
        let name = match kind {
            StubKind::MtProb => "mt_prob",
            StubKind::Qe => "qe",
            StubKind::CrossLikelihood => "cross_likelihood",
            _ => "similarity",
        };
        let score_kind = ScoreKindRegistry::default().get(name).unwrap().clone();
        let handle = BackendHandle::stub(StubSpec { kind, seed: 3 });
        let batch: Vec<(u64, &str, &str)> =
            texts.iter().enumerate().map(|(i, (s, t))| (i as u64 * 3, s.as_str(), t.as_str())).collect();
        let whole: Vec<(u64, f64)> =
            handle.score_pairs(&batch, &score_kind).into_iter().map(|(id, r)| (id, r.unwrap())).collect();

        let mut bounds: Vec<usize> = cuts.iter().map(|c| c.index(batch.len() + 1)).collect();
        bounds.extend([0, batch.len()]);
        bounds.sort_unstable();
        let mut parts = Vec::new();
        for w in bounds.windows(2) {
            parts.extend(handle.score_pairs(&batch[w[0]..w[1]], &score_kind).into_iter().map(|(id, r)| (id, r.unwrap())));
        }
        prop_assert_eq!(whole, parts);
    }

    #[test]
    fn permuted_responses_pair_by_id(texts in prop::collection::vec((text(), text()), 1..80), seed in any::<u64>()) {
        let kind = ScoreKindRegistry::default().get(SIMILARITY).unwrap().clone();
        let spec = StubSpec { kind: StubKind::Similarity, seed: 0 };
        let ordered = BackendHandle::stub(spec);
        let permuted = BackendHandle::new(Permuting { inner: StubBackend::new(spec), rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)) });
        let batch: Vec<(u64, &str, &str)> =
            texts.iter().enumerate().map(|(i, (s, t))| (1_000 - i as u64, s.as_str(), t.as_str())).collect();
        let a: BTreeMap<u64, u64> = ordered.score_pairs(&batch, &kind).into_iter().map(|(id, r)| (id, r.unwrap().to_bits())).collect();
        let b: BTreeMap<u64, u64> = permuted.score_pairs(&batch, &kind).into_iter().map(|(id, r)| (id, r.unwrap().to_bits())).collect();
        prop_assert_eq!(a, b);
    }
}
