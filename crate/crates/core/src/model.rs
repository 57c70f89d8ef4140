//! Domain types shared by every audit stage.
//!
//! Everything here is an immutable value object: bundles, findings and
//! severity tallies are built once and passed by reference between stages.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("bundle path `{0}` is not a clean relative path")]
    UnsafePath(String),
    #[error("bundle path `{0}` appears more than once")]
    DuplicatePath(String),
    #[error("train metadata field `{0}` must not be empty")]
    EmptyMetadata(&'static str),
    #[error("unknown severity `{0}`")]
    UnknownSeverity(String),
    #[error("unknown stage `{0}`")]
    UnknownStage(String),
}

/// Qualitative severity. `Info` sits below the four reported levels and is
/// never part of an L/M/H/C tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Low,
    Medium,
    High,
    Critical,
}

impl Severity {
    pub const ALL: [Severity; 5] = [
        Severity::Info,
        Severity::Low,
        Severity::Medium,
        Severity::High,
        Severity::Critical,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Info => "info",
            Severity::Low => "low",
            Severity::Medium => "medium",
            Severity::High => "high",
            Severity::Critical => "critical",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Severity {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Severity::ALL
            .into_iter()
            .find(|sev| sev.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ModelError::UnknownSeverity(s.to_string()))
    }
}

/// Pipeline steps, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageId {
    CodeGraph,
    Sast,
    DependencyScan,
    SecretDetection,
    Disallow,
    Compliance,
    ImageAnalysis,
    Dast,
    Decision,
    Report,
}

impl StageId {
    pub const ALL: [StageId; 10] = [
        StageId::CodeGraph,
        StageId::Sast,
        StageId::DependencyScan,
        StageId::SecretDetection,
        StageId::Disallow,
        StageId::Compliance,
        StageId::ImageAnalysis,
        StageId::Dast,
        StageId::Decision,
        StageId::Report,
    ];

    /// Step number in the audit pipeline (1-based).
    pub fn step(self) -> u8 {
        self as u8 + 1
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StageId::CodeGraph => "code_graph",
            StageId::Sast => "sast",
            StageId::DependencyScan => "dependency_scan",
            StageId::SecretDetection => "secret_detection",
            StageId::Disallow => "disallow",
            StageId::Compliance => "compliance",
            StageId::ImageAnalysis => "image_analysis",
            StageId::Dast => "dast",
            StageId::Decision => "decision",
            StageId::Report => "report",
        }
    }

    /// Human label used in rendered reports.
    pub fn title(self) -> &'static str {
        match self {
            StageId::CodeGraph => "Code documentation",
            StageId::Sast => "SAST",
            StageId::DependencyScan => "Dependency analysis",
            StageId::SecretDetection => "Secret detection",
            StageId::Disallow => "Allow/disallow lists",
            StageId::Compliance => "Compliance",
            StageId::ImageAnalysis => "Image analysis",
            StageId::Dast => "DAST",
            StageId::Decision => "Decision",
            StageId::Report => "Report",
        }
    }

    /// Stages that emit findings (everything before the decision step).
    pub fn produces_findings(self) -> bool {
        self < StageId::Decision
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_lowercase().replace('-', "_");
        StageId::ALL
            .into_iter()
            .find(|stage| stage.as_str() == wanted)
            .ok_or_else(|| ModelError::UnknownStage(s.to_string()))
    }
}

/// 1-based line and column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Position {
    pub line: u32,
    pub col: u32,
}

impl Position {
    pub fn new(line: u32, col: u32) -> Self {
        Self { line, col }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// Inclusive start, exclusive end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: Position,
    pub end: Position,
}

impl Span {
    pub fn new(start: Position, end: Position) -> Self {
        Self { start, end }
    }

    /// Span covering a whole line of `len` characters.
    pub fn line(line: u32, len: u32) -> Self {
        Self::new(Position::new(line, 1), Position::new(line, len + 1))
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

/// One detected vulnerability or policy violation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub stage: StageId,
    pub rule_id: String,
    pub severity: Severity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
}

impl Finding {
    pub fn new(
        stage: StageId,
        rule_id: impl Into<String>,
        severity: Severity,
        message: impl Into<String>,
    ) -> Self {
        let rule_id = rule_id.into();
        debug_assert!(!rule_id.is_empty(), "finding rule id must not be empty");
        Self {
            stage,
            rule_id,
            severity,
            file: None,
            span: None,
            message: message.into(),
            evidence: None,
        }
    }

    pub fn in_file(mut self, file: impl Into<String>) -> Self {
        self.file = Some(file.into());
        self
    }

    /// Attach a span. The finding must already carry a file.
    pub fn at(mut self, span: Span) -> Self {
        debug_assert!(self.file.is_some(), "span requires a file");
        self.span = Some(span);
        self
    }

    pub fn with_evidence(mut self, evidence: impl Into<String>) -> Self {
        self.evidence = Some(evidence.into());
        self
    }

    /// Ordering key used by every stage: file, span, rule id.
    pub fn sort_key(&self) -> (Option<&str>, Option<Span>, &str, &str) {
        (
            self.file.as_deref(),
            self.span,
            self.rule_id.as_str(),
            self.message.as_str(),
        )
    }
}

/// Sort findings into the canonical (file, span, rule id) order.
pub fn sort_findings(findings: &mut [Finding]) {
    findings.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

/// Per-severity tallies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeverityCounts {
    pub info: u64,
    pub low: u64,
    pub medium: u64,
    pub high: u64,
    pub critical: u64,
}

impl SeverityCounts {
    /// Build from an L/M/H/C tuple; `info` is zero.
    pub fn lmhc(low: u64, medium: u64, high: u64, critical: u64) -> Self {
        Self {
            info: 0,
            low,
            medium,
            high,
            critical,
        }
    }

    pub fn get(&self, severity: Severity) -> u64 {
        match severity {
            Severity::Info => self.info,
            Severity::Low => self.low,
            Severity::Medium => self.medium,
            Severity::High => self.high,
            Severity::Critical => self.critical,
        }
    }

    fn slot(&mut self, severity: Severity) -> &mut u64 {
        match severity {
            Severity::Info => &mut self.info,
            Severity::Low => &mut self.low,
            Severity::Medium => &mut self.medium,
            Severity::High => &mut self.high,
            Severity::Critical => &mut self.critical,
        }
    }

    pub fn add(&mut self, severity: Severity) {
        *self.slot(severity) += 1;
    }

    pub fn total(&self) -> u64 {
        Severity::ALL.iter().map(|s| self.get(*s)).sum()
    }

    /// The reported (Low, Medium, High, Critical) tuple.
    pub fn as_lmhc(&self) -> (u64, u64, u64, u64) {
        (self.low, self.medium, self.high, self.critical)
    }
}

impl fmt::Display for SeverityCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}/{}/{}/{})",
            self.low, self.medium, self.high, self.critical
        )
    }
}

pub fn count_severities(findings: &[Finding]) -> SeverityCounts {
    let mut counts = SeverityCounts::default();
    for finding in findings {
        counts.add(finding.severity);
    }
    counts
}

/// Number of findings at or above `floor`.
pub fn severity_at_least(counts: &SeverityCounts, floor: Severity) -> u64 {
    Severity::ALL
        .iter()
        .filter(|s| **s >= floor)
        .map(|s| counts.get(*s))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainMetadata {
    pub name: String,
    pub version: String,
    #[serde(default)]
    pub creator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commit_id: Option<String>,
}

impl TrainMetadata {
    pub fn new(
        name: impl Into<String>,
        version: impl Into<String>,
        creator: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let meta = Self {
            name: name.into(),
            version: version.into(),
            creator: creator.into(),
            commit_id: None,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.name.trim().is_empty() {
            return Err(ModelError::EmptyMetadata("name"));
        }
        if self.version.trim().is_empty() {
            return Err(ModelError::EmptyMetadata("version"));
        }
        Ok(())
    }

    /// Identifier used in graph IRIs and output file names.
    pub fn train_id(&self) -> String {
        format!("{}/{}", slug(&self.name), slug(&self.version))
    }
}

fn slug(text: &str) -> String {
    text.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// A file carried by a bundle, addressed by a `/`-separated relative path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleFile {
    pub path: String,
    pub contents: Vec<u8>,
}

impl BundleFile {
    pub fn new(path: impl Into<String>, contents: impl Into<Vec<u8>>) -> Self {
        Self {
            path: path.into(),
            contents: contents.into(),
        }
    }

    pub fn text(&self) -> std::borrow::Cow<'_, str> {
        String::from_utf8_lossy(&self.contents)
    }

    /// Lowercased extension, if any.
    pub fn extension(&self) -> Option<String> {
        let name = self.path.rsplit('/').next()?;
        let (stem, ext) = name.rsplit_once('.')?;
        (!stem.is_empty()).then(|| ext.to_ascii_lowercase())
    }
}

/// Rejects absolute paths, empty segments and any `.`/`..` segment.
pub fn is_clean_relative_path(path: &str) -> bool {
    !path.is_empty()
        && !path.starts_with('/')
        && !path.contains('\\')
        && path
            .split('/')
            .all(|seg| !seg.is_empty() && seg != "." && seg != "..")
}

/// A train in its source form: code, dependency manifest, build recipe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainBundle {
    pub root_path: std::path::PathBuf,
    source_files: Vec<BundleFile>,
    pub dependency_manifest: Option<BundleFile>,
    pub container_build_file: Option<BundleFile>,
    /// Remaining files of the bundle (data, configs, other code). They are
    /// not scanned as sources but are copied into execution working copies.
    resources: Vec<BundleFile>,
    pub metadata: TrainMetadata,
}

impl TrainBundle {
    pub fn new(
        root_path: impl Into<std::path::PathBuf>,
        mut source_files: Vec<BundleFile>,
        dependency_manifest: Option<BundleFile>,
        container_build_file: Option<BundleFile>,
        mut resources: Vec<BundleFile>,
        metadata: TrainMetadata,
    ) -> Result<Self, ModelError> {
        metadata.validate()?;
        source_files.sort_by(|a, b| a.path.cmp(&b.path));
        resources.sort_by(|a, b| a.path.cmp(&b.path));

        let mut seen = BTreeSet::new();
        let all = source_files
            .iter()
            .chain(dependency_manifest.iter())
            .chain(container_build_file.iter())
            .chain(resources.iter());
        for file in all {
            if !is_clean_relative_path(&file.path) {
                return Err(ModelError::UnsafePath(file.path.clone()));
            }
            if !seen.insert(file.path.as_str()) {
                return Err(ModelError::DuplicatePath(file.path.clone()));
            }
        }

        Ok(Self {
            root_path: root_path.into(),
            source_files,
            dependency_manifest,
            container_build_file,
            resources,
            metadata,
        })
    }

    /// Source files in lexicographic path order.
    pub fn source_files(&self) -> &[BundleFile] {
        &self.source_files
    }

    pub fn resources(&self) -> &[BundleFile] {
        &self.resources
    }

    /// Every file of the bundle, sources first.
    pub fn all_files(&self) -> impl Iterator<Item = &BundleFile> {
        self.source_files
            .iter()
            .chain(self.dependency_manifest.iter())
            .chain(self.container_build_file.iter())
            .chain(self.resources.iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn finding(sev: Severity) -> Finding {
        Finding::new(StageId::Sast, "sast.test", sev, "test")
    }

    #[test]
    fn counts_empty() {
        assert_eq!(count_severities(&[]), SeverityCounts::default());
    }

    #[test]
    fn counts_medium_and_high() {
        let counts = count_severities(&[finding(Severity::Medium), finding(Severity::High)]);
        assert_eq!(counts.as_lmhc(), (0, 1, 1, 0));
        assert_eq!(counts.to_string(), "(0/1/1/0)");
    }

    #[test]
    fn counts_all_critical() {
        let findings: Vec<_> = (0..5).map(|_| finding(Severity::Critical)).collect();
        assert_eq!(count_severities(&findings).as_lmhc(), (0, 0, 0, 5));
    }

    #[test]
    fn at_least_image_tuple() {
        let counts = SeverityCounts::lmhc(181, 3, 1, 1);
        assert_eq!(severity_at_least(&counts, Severity::High), 2);
        assert_eq!(severity_at_least(&counts, Severity::Info), 186);
        assert_eq!(
            severity_at_least(&SeverityCounts::default(), Severity::Critical),
            0
        );
    }

    #[test]
    fn severity_order() {
        assert!(Severity::Info < Severity::Low);
        assert!(Severity::High < Severity::Critical);
        assert_eq!("HIGH".parse::<Severity>().unwrap(), Severity::High);
        assert!("severe".parse::<Severity>().is_err());
    }

    #[test]
    fn stage_ids_map_to_steps() {
        assert_eq!(StageId::CodeGraph.step(), 1);
        assert_eq!(StageId::Report.step(), 10);
        assert_eq!(
            "image-analysis".parse::<StageId>().unwrap(),
            StageId::ImageAnalysis
        );
    }

    #[test]
    fn bundle_rejects_traversal_and_duplicates() {
        let meta = TrainMetadata::new("t", "1", "me").unwrap();
        let err = TrainBundle::new(
            ".",
            vec![BundleFile::new("../x.py", "")],
            None,
            None,
            vec![],
            meta.clone(),
        )
        .unwrap_err();
        assert_eq!(err, ModelError::UnsafePath("../x.py".into()));

        let err = TrainBundle::new(
            ".",
            vec![BundleFile::new("a.py", ""), BundleFile::new("a.py", "")],
            None,
            None,
            vec![],
            meta,
        )
        .unwrap_err();
        assert_eq!(err, ModelError::DuplicatePath("a.py".into()));
    }

    #[test]
    fn bundle_sorts_sources() {
        let meta = TrainMetadata::new("t", "1", "me").unwrap();
        let bundle = TrainBundle::new(
            ".",
            vec![BundleFile::new("z.py", ""), BundleFile::new("a/b.py", "")],
            None,
            None,
            vec![],
            meta,
        )
        .unwrap();
        let paths: Vec<_> = bundle
            .source_files()
            .iter()
            .map(|f| f.path.as_str())
            .collect();
        assert_eq!(paths, ["a/b.py", "z.py"]);
    }

    #[test]
    fn metadata_requires_name_and_version() {
        assert!(TrainMetadata::new("", "1", "x").is_err());
        assert!(TrainMetadata::new("n", " ", "x").is_err());
    }

    fn any_severity() -> impl Strategy<Value = Severity> {
        prop::sample::select(Severity::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn counting_is_permutation_invariant(sevs in prop::collection::vec(any_severity(), 0..40), seed in any::<u64>()) {
            let findings: Vec<_> = sevs.iter().map(|s| finding(*s)).collect();
            let mut shuffled = findings.clone();
            // deterministic Fisher-Yates driven by the seed
            let mut state = seed | 1;
            for i in (1..shuffled.len()).rev() {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                shuffled.swap(i, (state % (i as u64 + 1)) as usize);
            }
            let counts = count_severities(&findings);
            prop_assert_eq!(counts, count_severities(&shuffled));
            prop_assert_eq!(counts.total(), findings.len() as u64);
        }

        #[test]
        fn at_least_is_non_increasing(sevs in prop::collection::vec(any_severity(), 0..40)) {
            let findings: Vec<_> = sevs.iter().map(|s| finding(*s)).collect();
            let counts = count_severities(&findings);
            let series: Vec<u64> = Severity::ALL.iter().map(|f| severity_at_least(&counts, *f)).collect();
            prop_assert!(series.windows(2).all(|w| w[0] >= w[1]));
            prop_assert_eq!(series[0], findings.len() as u64);
        }
    }
}
