//! The README's per-command flag lists must match `--help`.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

/// Flags every subcommand inherits; documented once, not per command.
const GLOBAL: &[&str] = &["--help", "--version", "--verbose", "--workers"];

fn flags_in(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for line in text.lines() {
        let line = line.trim_start();
        // Only the leading option of a help or list line names a flag.
        if !line.starts_with('-') {
            continue;
        }
        let Some(start) = line.find("--") else { continue };
        let flag: String = line[start..].chars().take_while(|c| *c == '-' || c.is_ascii_alphanumeric()).collect();
        if !GLOBAL.contains(&flag.as_str()) {
            out.insert(flag);
        }
    }
    out
}

/// Flag lines of the README section headed by `title`.
fn readme_section(readme: &str, title: &str) -> String {
    let heading = format!("### `{title}`");
    let start = readme.find(&heading).unwrap_or_else(|| panic!("README has no section {heading}"));
    let body = &readme[start + heading.len()..];
    let end = body.find("\n#").unwrap_or(body.len());
    body[..end].lines().filter(|l| l.starts_with("- `--")).collect::<Vec<_>>().join("\n")
}

fn help(binary: &str, args: &[&str]) -> String {
    let o = Command::new(binary).args(args).arg("--help").output().unwrap();
    assert!(o.status.success());
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn readme_flag_lists_match_help() {
    let readme = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap();
    let main = env!("CARGO_BIN_EXE_bitextkit");
    let commands = [
        "filter",
        "stats",
        "dedup-build",
        "select-synth",
        "rerank",
        "chrf",
        "validate-config",
        "manifest-check",
        "adapter-check",
    ];
    for command in commands {
        let documented = flags_in(&readme_section(&readme, &format!("bitextkit {command}")));
        let actual = flags_in(&help(main, &[command]));
        assert!(!actual.is_empty(), "{command}");
        assert_eq!(documented, actual, "bitextkit {command}");
    }
    let documented = flags_in(&readme_section(&readme, "pairscore-stub"));
    let actual = flags_in(&help(env!("CARGO_BIN_EXE_pairscore-stub"), &[]));
    assert_eq!(documented, actual, "pairscore-stub");
}
