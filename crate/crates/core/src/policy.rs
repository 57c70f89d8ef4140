//! Host allow/disallow lists and ecosystem compliance checks.

use std::collections::BTreeSet;

use regex::Regex;
use serde::Deserialize;
use thiserror::Error;

use crate::model::{Finding, Position, Severity, Span, StageId, TrainBundle};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("policy pattern `{id}` has an invalid regex: {message}")]
    BadRegex { id: String, message: String },
    #[error("policy pattern id `{0}` is used more than once")]
    DuplicateId(String),
    #[error("unknown required language `{0}`")]
    UnknownLanguage(String),
    #[error("required dependencies are configured but the bundle has no dependency manifest")]
    MissingManifest,
}

/// Programming languages by extension. Files with an extension outside this
/// table (data, docs, configuration) never trip the language check.
const LANGUAGES: &[(&str, &[&str])] = &[
    ("python", &["py", "pyw", "pyi", "pyx", "ipynb"]),
    ("r", &["r", "rmd"]),
    ("julia", &["jl"]),
    ("javascript", &["js", "mjs", "cjs"]),
    ("typescript", &["ts", "tsx"]),
    ("java", &["java"]),
    ("kotlin", &["kt", "kts"]),
    ("scala", &["scala"]),
    ("c", &["c", "h"]),
    ("cpp", &["cpp", "cc", "cxx", "hpp", "hh", "hxx"]),
    ("csharp", &["cs"]),
    ("go", &["go"]),
    ("rust", &["rs"]),
    ("ruby", &["rb"]),
    ("perl", &["pl", "pm"]),
    ("php", &["php"]),
    ("shell", &["sh", "bash", "zsh"]),
    ("powershell", &["ps1"]),
    ("matlab", &["m"]),
    ("swift", &["swift"]),
    ("lua", &["lua"]),
    ("sas", &["sas"]),
    ("stata", &["do"]),
];

fn language_of(ext: &str) -> Option<&'static str> {
    LANGUAGES
        .iter()
        .find(|(_, exts)| exts.contains(&ext))
        .map(|(lang, _)| *lang)
}

#[derive(Debug, Clone, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct DisallowSpec {
    pub id: String,
    pub regex: String,
    pub severity: Option<Severity>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct AllowSpec {
    pub id: String,
    pub regex: String,
}

/// Policy section of the pipeline configuration, as written.
#[derive(Debug, Clone, Default, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    #[serde(default)]
    pub disallow: Vec<DisallowSpec>,
    #[serde(default)]
    pub allow: Vec<AllowSpec>,
    pub required_language: Option<String>,
    #[serde(default)]
    pub required_dependencies: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct DisallowPattern {
    pub id: String,
    pub regex: Regex,
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct AllowPattern {
    pub id: String,
    pub regex: Regex,
}

#[derive(Debug, Clone, Default)]
pub struct PolicyConfig {
    pub disallow_patterns: Vec<DisallowPattern>,
    pub allow_patterns: Vec<AllowPattern>,
    pub required_language: Option<String>,
    pub required_dependencies: Vec<String>,
}

fn compile(id: &str, regex: &str) -> Result<Regex, PolicyError> {
    Regex::new(regex).map_err(|e| PolicyError::BadRegex {
        id: id.to_string(),
        message: e.to_string(),
    })
}

impl PolicyConfig {
    pub fn from_spec(spec: &PolicySpec) -> Result<Self, PolicyError> {
        let mut seen = BTreeSet::new();
        for id in spec
            .disallow
            .iter()
            .map(|d| &d.id)
            .chain(spec.allow.iter().map(|a| &a.id))
        {
            if !seen.insert(id) {
                return Err(PolicyError::DuplicateId(id.clone()));
            }
        }
        let disallow_patterns = spec
            .disallow
            .iter()
            .map(|d| {
                Ok(DisallowPattern {
                    id: d.id.clone(),
                    regex: compile(&d.id, &d.regex)?,
                    severity: d.severity.unwrap_or(Severity::High),
                    message: d.message.clone().unwrap_or_else(|| {
                        format!("line matches disallowed pattern `{}`", d.regex)
                    }),
                })
            })
            .collect::<Result<_, PolicyError>>()?;
        let allow_patterns = spec
            .allow
            .iter()
            .map(|a| {
                Ok(AllowPattern {
                    id: a.id.clone(),
                    regex: compile(&a.id, &a.regex)?,
                })
            })
            .collect::<Result<_, PolicyError>>()?;
        let required_language = match &spec.required_language {
            Some(lang) => {
                let lang = lang.to_ascii_lowercase();
                if !LANGUAGES.iter().any(|(l, _)| *l == lang) {
                    return Err(PolicyError::UnknownLanguage(lang));
                }
                Some(lang)
            }
            None => None,
        };
        Ok(Self {
            disallow_patterns,
            allow_patterns,
            required_language,
            required_dependencies: spec.required_dependencies.clone(),
        })
    }
}

fn col(line: &str, byte: usize) -> u32 {
    line[..byte].chars().count() as u32 + 1
}

fn excerpt(line: &str) -> String {
    let trimmed = line.trim();
    match trimmed.char_indices().nth(120) {
        Some((cut, _)) => format!("{}…", &trimmed[..cut]),
        None => trimmed.to_string(),
    }
}

/// One finding per disallow match per line; with a non-empty allow list, one
/// `policy.not-allowed` finding per non-blank line that no allow pattern
/// matches.
pub fn check_disallow(bundle: &TrainBundle, config: &PolicyConfig) -> Vec<Finding> {
    let mut findings = Vec::new();
    for file in bundle.source_files() {
        let text = file.text();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx as u32 + 1;
            for pattern in &config.disallow_patterns {
                if let Some(m) = pattern.regex.find(line) {
                    let span = Span::new(
                        Position::new(line_no, col(line, m.start())),
                        Position::new(line_no, col(line, m.end())),
                    );
                    findings.push(
                        Finding::new(
                            StageId::Disallow,
                            format!("policy.disallow.{}", pattern.id),
                            pattern.severity,
                            &pattern.message,
                        )
                        .in_file(&file.path)
                        .at(span)
                        .with_evidence(excerpt(line)),
                    );
                }
            }
            if !config.allow_patterns.is_empty()
                && !line.trim().is_empty()
                && !config.allow_patterns.iter().any(|a| a.regex.is_match(line))
            {
                findings.push(
                    Finding::new(
                        StageId::Disallow,
                        "policy.not-allowed",
                        Severity::High,
                        "line matches no allow-list pattern",
                    )
                    .in_file(&file.path)
                    .at(Span::line(line_no, line.chars().count() as u32))
                    .with_evidence(excerpt(line)),
                );
            }
        }
    }
    crate::model::sort_findings(&mut findings);
    findings
}

fn mentions_package(text: &str, package: &str) -> bool {
    let parts: Vec<String> = package
        .split(['-', '_', '.'])
        .filter(|p| !p.is_empty())
        .map(regex::escape)
        .collect();
    if parts.is_empty() {
        return false;
    }
    let pattern = format!(
        r"(?im)(^|[^A-Za-z0-9_.-]){}($|[^A-Za-z0-9_.-])",
        parts.join("[-_.]")
    );
    Regex::new(&pattern).is_ok_and(|re| re.is_match(text))
}

/// Language and required-dependency checks.
pub fn check_compliance(
    bundle: &TrainBundle,
    config: &PolicyConfig,
) -> Result<Vec<Finding>, PolicyError> {
    let mut findings = Vec::new();
    if let Some(required) = &config.required_language {
        for file in bundle.source_files().iter().chain(bundle.resources()) {
            let Some(ext) = file.extension() else {
                continue;
            };
            match language_of(&ext) {
                Some(lang) if lang != required => findings.push(
                    Finding::new(
                        StageId::Compliance,
                        "compliance.language",
                        Severity::Medium,
                        format!("{lang} source file in a train that must be written in {required}"),
                    )
                    .in_file(&file.path),
                ),
                _ => {}
            }
        }
    }
    if !config.required_dependencies.is_empty() {
        let manifest = bundle
            .dependency_manifest
            .as_ref()
            .ok_or(PolicyError::MissingManifest)?;
        let manifest_text = manifest.text();
        let build_text = bundle
            .container_build_file
            .as_ref()
            .map(|f| f.text().into_owned())
            .unwrap_or_default();
        for dep in &config.required_dependencies {
            if !mentions_package(&manifest_text, dep) && !mentions_package(&build_text, dep) {
                findings.push(
                    Finding::new(
                        StageId::Compliance,
                        "compliance.missing-dependency",
                        Severity::Medium,
                        format!("required dependency `{dep}` is not declared"),
                    )
                    .in_file(&manifest.path),
                );
            }
        }
    }
    crate::model::sort_findings(&mut findings);
    Ok(findings)
}
