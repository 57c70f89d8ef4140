//! The audit record: canonical JSON for machines, Markdown for people.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decision::{StageResult, Verdict};
use crate::model::{count_severities, Finding, Severity, StageId, TrainMetadata};
use crate::runtime::{ContentDiff, RunRecord};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("inconsistent report inputs: {0}")]
    InconsistentInputs(String),
    #[error("report JSON is not valid: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub metadata: TrainMetadata,
    /// RFC 3339, UTC.
    pub started: String,
    pub finished: String,
    pub tool_version: String,
    pub db_snapshot_id: String,
    pub stage_results: BTreeMap<StageId, StageResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime: Option<RunRecord>,
    pub verdict: Verdict,
}

/// Provenance fields that do not come from the stages themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportContext {
    pub started: String,
    pub finished: String,
    pub tool_version: String,
    pub db_snapshot_id: String,
}

/// `sha256:<hex>` of the advisory database bytes.
pub fn snapshot_id(db_bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(db_bytes)))
}

pub fn build_report(
    results: BTreeMap<StageId, StageResult>,
    verdict: Verdict,
    runtime: Option<RunRecord>,
    metadata: TrainMetadata,
    context: ReportContext,
) -> Result<AuditReport, ReportError> {
    for entry in &verdict.trace {
        if !results.contains_key(&entry.stage) {
            return Err(ReportError::InconsistentInputs(format!(
                "decision check `{}` refers to stage {} which has no results",
                entry.threshold, entry.stage
            )));
        }
    }
    let mut stage_results = BTreeMap::new();
    for (stage, result) in results {
        if result.stage != stage {
            return Err(ReportError::InconsistentInputs(format!(
                "results filed under {stage} belong to {}",
                result.stage
            )));
        }
        if let Some(f) = result.findings.iter().find(|f| f.stage != stage) {
            return Err(ReportError::InconsistentInputs(format!(
                "finding `{}` of stage {} filed under {stage}",
                f.rule_id, f.stage
            )));
        }
        if result.counts != count_severities(&result.findings) {
            return Err(ReportError::InconsistentInputs(format!(
                "severity counts of {stage} do not match its findings"
            )));
        }
        stage_results.insert(stage, StageResult::new(stage, result.findings));
    }
    Ok(AuditReport {
        metadata,
        started: context.started,
        finished: context.finished,
        tool_version: context.tool_version,
        db_snapshot_id: context.db_snapshot_id,
        stage_results,
        runtime,
        verdict,
    })
}

/// Canonical JSON: sorted object keys, two-space indent, LF line ends and a
/// trailing newline.
pub fn emit_json(report: &AuditReport) -> Vec<u8> {
    // `Value` maps are ordered, which sorts every object's keys.
    let value = serde_json::to_value(report).expect("report serializes");
    let mut text = serde_json::to_string_pretty(&value).expect("value serializes");
    text.push('\n');
    text.into_bytes()
}

pub fn parse_json(bytes: &[u8]) -> Result<AuditReport, ReportError> {
    serde_json::from_slice(bytes).map_err(|e| ReportError::Parse(e.to_string()))
}

/// Canonical JSON with both timestamps blanked, for reproducibility checks.
pub fn emit_json_without_timestamps(report: &AuditReport) -> Vec<u8> {
    let mut r = report.clone();
    r.started.clear();
    r.finished.clear();
    emit_json(&r)
}

impl AuditReport {
    pub fn all_findings(&self) -> impl Iterator<Item = &Finding> {
        self.stage_results.values().flat_map(|r| r.findings.iter())
    }

    /// Base name of the output files.
    pub fn file_stem(&self) -> String {
        let name: String = self
            .metadata
            .name
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        format!("{name}-audit")
    }
}

fn megabytes(bytes: u64) -> String {
    format!("{:.3}", bytes as f64 / 1_000_000.0)
}

fn code(text: &str) -> String {
    let flat = text.replace(['\n', '\r'], " ");
    if flat.contains('`') {
        format!("`` {flat} ``")
    } else {
        format!("`{flat}`")
    }
}

fn location(f: &Finding) -> String {
    match (&f.file, &f.span) {
        (Some(file), Some(span)) => format!("{file}:{}", span.start),
        (Some(file), None) => file.clone(),
        (None, _) => "bundle".to_string(),
    }
}

#[derive(Default)]
struct Tree {
    children: BTreeMap<String, Tree>,
    label: Option<String>,
}

impl Tree {
    fn insert(&mut self, path: &str, label: String) {
        let mut node = self;
        for part in path.split('/').filter(|p| !p.is_empty()) {
            node = node.children.entry(part.to_string()).or_default();
        }
        node.label = Some(label);
    }

    fn render(&self, prefix: &str, out: &mut String) {
        let n = self.children.len();
        for (i, (name, child)) in self.children.iter().enumerate() {
            let last = i + 1 == n;
            let branch = if last { "└── " } else { "├── " };
            let dir = if child.children.is_empty() { "" } else { "/" };
            let _ = write!(out, "{prefix}{branch}{name}{dir}");
            if let Some(label) = &child.label {
                let _ = write!(out, "  ({label})");
            }
            out.push('\n');
            let next = format!("{prefix}{}", if last { "    " } else { "│   " });
            child.render(&next, out);
        }
    }
}

fn diff_tree(diff: &ContentDiff) -> String {
    let mut tree = Tree::default();
    for (path, size) in &diff.added {
        tree.insert(path, format!("added, {size} B"));
    }
    for (path, delta) in &diff.modified {
        tree.insert(path, format!("modified, {delta:+} B"));
    }
    for path in &diff.removed {
        tree.insert(path, "removed".to_string());
    }
    let mut out = String::new();
    tree.render("", &mut out);
    out
}

/// Markdown rendering. Sections: verdict, severity table, findings, runtime
/// metrics, changed files, decision trace.
pub fn render_document(report: &AuditReport) -> String {
    let mut out = String::new();
    let m = &report.metadata;
    let _ = writeln!(out, "# Audit report: {} {}\n", m.name, m.version);
    let _ = writeln!(out, "**Verdict: {}**\n", report.verdict);
    if !m.creator.is_empty() {
        let _ = writeln!(out, "- Creator: {}", m.creator);
    }
    if let Some(commit) = &m.commit_id {
        let _ = writeln!(out, "- Commit: {commit}");
    }
    let _ = writeln!(out, "- Tool version: {}", report.tool_version);
    let _ = writeln!(out, "- Advisory database: {}", report.db_snapshot_id);
    let _ = writeln!(out, "- Started: {}", report.started);
    let _ = writeln!(out, "- Finished: {}\n", report.finished);

    out.push_str("## Severity summary\n\n");
    out.push_str("| Stage | Low | Medium | High | Critical |\n|---|---:|---:|---:|---:|\n");
    for (stage, r) in &report.stage_results {
        let (l, md, h, c) = r.counts.as_lmhc();
        let _ = writeln!(out, "| {} | {l} | {md} | {h} | {c} |", stage.title());
    }
    out.push('\n');

    out.push_str("## Findings\n\n");
    let mut by_rule: BTreeMap<(StageId, &str), Vec<&Finding>> = BTreeMap::new();
    let mut first_stage: BTreeMap<&str, StageId> = BTreeMap::new();
    for f in report.all_findings() {
        let stage = *first_stage.entry(&f.rule_id).or_insert(f.stage);
        by_rule.entry((stage, &f.rule_id)).or_default().push(f);
    }
    if by_rule.is_empty() {
        out.push_str("No findings.\n\n");
    }
    for ((stage, rule), findings) in &by_rule {
        let worst = findings
            .iter()
            .map(|f| f.severity)
            .max()
            .unwrap_or(Severity::Info);
        let _ = writeln!(
            out,
            "### `{rule}`\n\n{} | {} | {} occurrence(s)\n",
            stage.title(),
            worst,
            findings.len()
        );
        for f in findings {
            let _ = write!(
                out,
                "- {} [{}]: {}",
                location(f),
                f.severity,
                f.message.replace('\n', " ")
            );
            if let Some(ev) = &f.evidence {
                let _ = write!(out, " {}", code(ev));
            }
            out.push('\n');
        }
        out.push('\n');
    }

    out.push_str("## Runtime metrics\n\n");
    match &report.runtime {
        None => out.push_str("Dynamic analysis did not run.\n\n"),
        Some(run) => {
            out.push_str(
                "CPU is the peak percent of one core used by the train's process tree.\n\n",
            );
            out.push_str(
                "| Station | Exit | CPU % | Memory GB | PIDs | RX MB | TX MB | Wall s |\n",
            );
            out.push_str("|---|---|---:|---:|---:|---:|---:|---:|\n");
            for s in &run.stations {
                let exit = match (s.timed_out, s.exit_code) {
                    (true, _) => "timed out".to_string(),
                    (false, Some(c)) => c.to_string(),
                    (false, None) => "killed".to_string(),
                };
                let mt = &s.metrics;
                let _ = writeln!(
                    out,
                    "| {} | {exit} | {:.1} | {:.3} | {} | {} | {} | {:.1} |",
                    s.station_id,
                    mt.cpu_percent_peak,
                    mt.memory_gb_peak,
                    mt.pids_peak,
                    megabytes(mt.rx_bytes),
                    megabytes(mt.tx_bytes),
                    mt.wall_time
                );
            }
            out.push('\n');
        }
    }

    out.push_str("## Changed files\n\n");
    match &report.runtime {
        None => out.push_str("Dynamic analysis did not run.\n\n"),
        Some(run) => {
            for s in &run.stations {
                let _ = writeln!(out, "### {}\n", s.station_id);
                if s.diff.is_empty() {
                    out.push_str("No files changed.\n\n");
                } else {
                    let _ = writeln!(out, "```\n.\n{}```\n", diff_tree(&s.diff));
                }
            }
        }
    }

    out.push_str("## Decision trace\n\n");
    if report.verdict.trace.is_empty() {
        out.push_str("No checks were evaluated.\n");
    } else {
        out.push_str("| # | Check | Stage | Floor | Observed | Limit | Result |\n|---:|---|---|---|---:|---:|---|\n");
        for (i, e) in report.verdict.trace.iter().enumerate() {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} |",
                i + 1,
                e.threshold,
                e.stage.title(),
                e.severity_floor,
                e.observed,
                e.limit,
                if e.passed { "pass" } else { "fail" }
            );
        }
    }
    let _ = writeln!(out, "\nResult: {}", report.verdict);
    out
}
