//! Per-stage funnel accounting and the removed-pair audit log.

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::model::{Removal, SentencePair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub in_count: u64,
    pub removed_count: u64,
    pub modified_count: u64,
    pub out_count: u64,
    /// Excluded from equality checks between runs; see [`FunnelReport::without_timing`].
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub initial: u64,
    #[serde(rename = "final")]
    pub final_count: u64,
    pub retention_ratio: f64,
    pub retention: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelReport {
    pub stages: Vec<StageReport>,
    pub totals: Totals,
}

/// `final / initial` as a percentage with two decimals, truncated toward
/// zero in integer arithmetic so the printed digits never overstate what
/// survived. An empty input retains everything.
pub fn format_retention(final_count: u64, initial: u64) -> String {
    if initial == 0 {
        return "100.00%".to_string();
    }
    let basis_points = u128::from(final_count) * 10_000 / u128::from(initial);
    format!("{}.{:02}%", basis_points / 100, basis_points % 100)
}

pub fn retention_ratio(final_count: u64, initial: u64) -> f64 {
    if initial == 0 {
        1.0
    } else {
        final_count as f64 / initial as f64
    }
}

impl FunnelReport {
    pub fn new(initial: u64) -> Self {
        FunnelReport {
            stages: Vec::new(),
            totals: Totals {
                initial,
                final_count: initial,
                retention_ratio: 1.0,
                retention: format_retention(initial, initial),
            },
        }
    }

    /// Appends a stage; its input is the previous stage's output.
    pub fn push(&mut self, name: &str, removed: u64, modified: u64, wall_time_ms: u64) {
        let in_count = self.totals.final_count;
        debug_assert!(removed <= in_count);
        let out_count = in_count - removed;
        self.stages.push(StageReport {
            name: name.to_string(),
            in_count,
            removed_count: removed,
            modified_count: modified,
            out_count,
            wall_time_ms,
        });
        self.set_final(out_count);
    }

    fn set_final(&mut self, final_count: u64) {
        let t = &mut self.totals;
        t.final_count = final_count;
        t.retention_ratio = retention_ratio(final_count, t.initial);
        t.retention = format_retention(final_count, t.initial);
    }

    pub fn total_removed(&self) -> u64 {
        self.stages.iter().map(|s| s.removed_count).sum()
    }

    /// Checks the accounting identities; returns the first violation.
    pub fn check(&self) -> Result<(), String> {
        let mut expected_in = self.totals.initial;
        for s in &self.stages {
            if s.in_count != expected_in {
                return Err(format!("stage `{}` in {} != previous out {}", s.name, s.in_count, expected_in));
            }
            if s.out_count + s.removed_count != s.in_count {
                return Err(format!("stage `{}` out + removed != in", s.name));
            }
            expected_in = s.out_count;
        }
        if self.totals.final_count != expected_in {
            return Err(format!("final {} != last out {}", self.totals.final_count, expected_in));
        }
        if self.totals.initial != self.totals.final_count + self.total_removed() {
            return Err("initial != final + removed".into());
        }
        Ok(())
    }

    /// A copy with every wall time zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.stages.iter_mut().for_each(|s| s.wall_time_ms = 0);
        r
    }

    pub fn to_json(&self, timing: bool) -> String {
        let r = if timing { self.clone() } else { self.without_timing() };
        serde_json::to_string_pretty(&r).expect("report serializes") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,in,removed,modified,out\n");
        for s in &self.stages {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.name, s.in_count, s.removed_count, s.modified_count, s.out_count
            ));
        }
        out
    }
}

impl fmt::Display for FunnelReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>12} {:>12} {:>10} {:>12}", "stage", "in", "removed", "modified", "out")?;
        for s in &self.stages {
            writeln!(
                f,
                "{:<24} {:>12} {:>12} {:>10} {:>12}",
                s.name, s.in_count, s.removed_count, s.modified_count, s.out_count
            )?;
        }
        write!(f, "kept {} of {} ({})", self.totals.final_count, self.totals.initial, self.totals.retention)
    }
}

/// One removed pair, as written to the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub pair: SentencePair,
    pub stage: String,
    /// `<stage>: <detail>`.
    pub reason: String,
}

impl AuditRow {
    pub fn new(pair: SentencePair, removal: &Removal) -> Self {
        AuditRow { pair, stage: removal.stage.clone(), reason: removal.to_string() }
    }
}

pub fn write_audit<W: Write>(rows: &[AuditRow], mut out: W) -> io::Result<()> {
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
