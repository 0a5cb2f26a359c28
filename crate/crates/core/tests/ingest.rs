use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use proptest::prelude::*;

use bitextkit::ingest::{load_manifest, parse_manifest, read_pairs, write_pairs, Format, IngestError, PairReader};
use bitextkit::model::SentencePair;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn opus_catalog_manifest() {
    let entries = load_manifest(&fixture("opus_manifest.txt")).unwrap();
    assert_eq!(entries.len(), 66);
    assert_eq!(entries.iter().map(|e| e.index).collect::<Vec<_>>(), (1..=66).collect::<Vec<_>>());
    assert_eq!(entries.iter().filter_map(|e| e.expected_pairs).sum::<u64>(), 48_319_843);

    let ecdc = &entries[2];
    assert_eq!((ecdc.name.as_str(), ecdc.version.as_str()), ("ECDC", "v2016-03-16"));
    assert_eq!(ecdc.format, Format::Tsv);
    assert_eq!(ecdc.expected_pairs, Some(2_512));
    assert_eq!(ecdc.paths, vec![fixture("ecdc.tsv")]);

    // Ditto names borrow the previous entry's prefix.
    assert!(entries.iter().all(|e| !e.name.starts_with('"')));
}

fn ecdc_rows(dir: &Path, rows: usize) -> Vec<SentencePair> {
    let manifest = "3; ECDC; v2016-03-16; tsv; ecdc.tsv; 2,512\n";
    let mut tsv = fs::File::create(dir.join("ecdc.tsv")).unwrap();
    for i in 0..rows {
        writeln!(tsv, "Surveillance report {i}.\tEftirlitsskýrsla {i}.").unwrap();
    }
    drop(tsv);
    let entry = parse_manifest(manifest, Some(dir)).unwrap().remove(0);
    read_pairs(&entry).unwrap().collect::<Result<Vec<_>, _>>().map_err(|e| panic!("{e}")).unwrap()
}

#[test]
fn ecdc_entry_count_verified() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = ecdc_rows(dir.path(), 2_512);
    assert_eq!(pairs.len(), 2_512);
    assert!(pairs.iter().enumerate().all(|(i, p)| p.id == i as u64 && p.origin == "ECDC v2016-03-16"));
    assert_eq!(pairs[2_511].tgt, "Eftirlitsskýrsla 2511.");

    // One row short: every row still arrives, then the mismatch.
    let manifest = "3; ECDC; v2016-03-16; tsv; short.tsv; 2,512\n";
    let body: String = (0..2_511).map(|i| format!("a {i}\tb {i}\n")).collect();
    fs::write(dir.path().join("short.tsv"), body).unwrap();
    let entry = parse_manifest(manifest, Some(dir.path())).unwrap().remove(0);
    let items: Vec<_> = read_pairs(&entry).unwrap().collect();
    assert_eq!(items.len(), 2_512);
    assert!(items[..2_511].iter().all(Result::is_ok));
    match &items[2_511] {
        Err(IngestError::CountMismatch { expected: 2_512, parsed: 2_511, .. }) => {}
        other => panic!("{other:?}"),
    }
}

fn sentence() -> impl Strategy<Value = String> {
    // Anything but the record separators of the line formats.
    "[^\t\n]{0,30}"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn write_then_read_preserves_sequence(
        texts in prop::collection::vec((sentence(), sentence()), 0..40),
        format in prop::sample::select(vec![Format::Tsv, Format::Jsonl, Format::MosesPair]),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let paths: Vec<PathBuf> = (0..format.path_count()).map(|i| dir.path().join(format!("f{i}"))).collect();
        let pairs: Vec<SentencePair> =
            texts.iter().enumerate().map(|(i, (s, t))| SentencePair::new(s.as_str(), t.as_str(), "o", i as u64)).collect();
        prop_assert_eq!(write_pairs(&pairs, format, &paths).unwrap(), pairs.len() as u64);
        let back: Vec<SentencePair> = PairReader::open(format, &paths, "o").unwrap().collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(back.len(), pairs.len());
        for (a, b) in pairs.iter().zip(&back) {
            prop_assert_eq!((&a.src, &a.tgt, a.id), (&b.src, &b.tgt, b.id));
        }
    }
}
