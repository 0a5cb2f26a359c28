//! Reading and writing a million pairs must not grow the heap with the
//! corpus. Alone in its binary so no other test disturbs the peak.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use bitextkit::ingest::{Format, PairReader, PairWriter};

const PAIRS: u64 = 1_000_000;
/// Far below the ~90 MB the corpus occupies on disk.
const CAP_BYTES: u64 = 48 << 20;

/// Peak resident set of this process, from procfs.
fn peak_rss() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

#[test]
fn million_pairs_stream_in_bounded_memory() {
    let dir = tempfile::tempdir().unwrap();
    let input: PathBuf = dir.path().join("big.tsv");
    {
        let mut w = BufWriter::new(File::create(&input).unwrap());
        for i in 0..PAIRS {
            writeln!(w, "Sentence number {i} about the weather today.\tSetning númer {i} um veðrið í dag.").unwrap();
        }
    }
    let before = peak_rss();

    let output = vec![dir.path().join("out.jsonl")];
    let mut writer = PairWriter::create(Format::Jsonl, &output).unwrap();
    let mut reader = PairReader::open(Format::Tsv, &[input], "big").unwrap();
    for pair in reader.by_ref() {
        writer.write(&pair.unwrap()).unwrap();
    }
    assert_eq!(writer.finish().unwrap(), PAIRS);
    assert_eq!(reader.parsed(), PAIRS);

    let back = PairReader::open(Format::Jsonl, &output, "big").unwrap().map(Result::unwrap);
    let mut count = 0u64;
    let mut last = None;
    for pair in back {
        count += 1;
        last = Some(pair.id);
    }
    assert_eq!((count, last), (PAIRS, Some(PAIRS - 1)));

    if let (Some(before), Some(after)) = (before, peak_rss()) {
        let growth = after.saturating_sub(before);
        assert!(growth < CAP_BYTES, "peak resident memory grew by {} MiB", growth >> 20);
    }
}
