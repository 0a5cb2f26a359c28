//! The conformance suite against the stub adapter binary, in good and
//! deliberately broken modes, over pipes and over a socket.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

const STUB: &str = env!("CARGO_BIN_EXE_pairscore-stub");

fn loopback_fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/loopback_fixture.jsonl")
}

fn bitextkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bitextkit")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[track_caller]
fn check(command: &str, extra: &[&str], code: i32) -> String {
    let mut args = vec!["adapter-check", "--command", command];
    args.extend_from_slice(extra);
    let o = bitextkit(&args);
    let out = stdout(&o);
    assert_eq!(o.status.code(), Some(code), "{out}{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn loopback_replays_fixture_for_each_seed() {
    let fixture = loopback_fixture();
    let text = fs::read_to_string(&fixture).unwrap();
    for seed in [0u64, 7] {
        let expected = text.lines().filter(|l| l.starts_with(&format!("{{\"seed\": {seed},"))).count();
        assert!(expected > 0);
        let out = check(
            &format!("{STUB} --kind loopback --seed {seed}"),
            &["--loopback-fixture", fixture.to_str().unwrap(), "--seed", &seed.to_string()],
            0,
        );
        assert!(out.contains(&format!("PASS loopback       {expected} fixture scores")), "{out}");
        assert!(!out.contains("FAIL"), "{out}");
    }

    // A wrong seed cannot reproduce the recorded scores.
    let out = check(&format!("{STUB} --kind loopback --seed 1"), &["--loopback-fixture", fixture.to_str().unwrap()], 3);
    assert!(out.contains("FAIL loopback"), "{out}");
}

#[test]
fn out_of_order_answers_pass() {
    let out = check(&format!("{STUB} --kind similarity --shuffle"), &[], 0);
    assert!(out.contains("PASS id-pairing"), "{out}");
}

#[test]
fn broken_adapters_fail_with_backend_exit() {
    let out = check(&format!("{STUB} --kind similarity --bad-handshake"), &[], 3);
    assert!(out.starts_with("FAIL handshake"), "{out}");

    let out = check(&format!("{STUB} --kind similarity --no-flush"), &["--timeout", "1"], 3);
    assert!(out.contains("FAIL flush"), "{out}");

    let out = check(&format!("{STUB} --kind similarity --crash-after 3"), &[], 3);
    assert!(out.contains("FAIL id-pairing"), "{out}");
    assert!(out.contains("FAIL clean-eof"), "{out}");
}

/// Kills the listening stub when the test ends, pass or fail.
struct Listener(Child);

impl Drop for Listener {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn socket_transport_passes() {
    let mut child =
        Command::new(STUB).args(["--kind", "qe", "--listen", "127.0.0.1:0"]).stdout(Stdio::piped()).spawn().unwrap();
    let mut address = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut address).unwrap();
    let _guard = Listener(child);
    let o = bitextkit(&["adapter-check", "--address", address.trim()]);
    let out = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{out}");
    assert!(out.contains("PASS handshake"), "{out}");
}

#[test]
fn named_adapter_resolves_in_adapter_dir() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("fake-labse");
    fs::write(&script, format!("#!/bin/sh\nexec {STUB} --kind similarity \"$@\"\n")).unwrap();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(&script, fs::Permissions::from_mode(0o755)).unwrap();
    }
    let o = Command::new(env!("CARGO_BIN_EXE_bitextkit"))
        .args(["adapter-check", "--adapter", "fake-labse"])
        .env("BITEXTKIT_ADAPTER_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));

    let o = Command::new(env!("CARGO_BIN_EXE_bitextkit"))
        .args(["adapter-check", "--adapter", "absent"])
        .env("BITEXTKIT_ADAPTER_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn out_of_process_scoring_matches_in_process() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let shipped = fs::read_to_string(root.join("../../configs/default_pipeline.toml")).unwrap();
    let needle = "[backends.labse]\nstub = \"similarity\"\n";
    assert!(shipped.contains(needle), "shipped config layout changed");
    let piped =
        shipped.replacen(needle, &format!("[backends.labse]\ncommand = [\"{STUB}\", \"--kind\", \"similarity\"]\n"), 1);

    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("piped.toml");
    fs::write(&config, piped).unwrap();
    let corpus = root.join("tests/fixtures/corpus.tsv");
    let run = |config: &Path, out: &Path| {
        let o = bitextkit(&[
            "filter",
            "--config",
            config.to_str().unwrap(),
            "--in",
            corpus.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--workers",
            "2",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(out).unwrap()
    };
    let inside = run(&root.join("../../configs/default_pipeline.toml"), &dir.path().join("a.tsv"));
    let outside = run(&config, &dir.path().join("b.tsv"));
    assert!(!inside.is_empty());
    assert_eq!(inside, outside);
}
