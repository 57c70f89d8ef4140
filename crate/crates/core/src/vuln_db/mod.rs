//! Offline advisory database.
//!
//! Records are stored one JSON object per line. Matching is by ecosystem,
//! normalized package name and version range; severities are derived from
//! the stored CVSS base score.

mod version;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Severity;

pub use version::{compare_versions, parse_version, PreRelease, PreReleaseTag, Version};

#[derive(Debug, Error, PartialEq)]
pub enum VulnDbError {
    #[error("invalid version `{0}`")]
    InvalidVersion(String),
    #[error("CVSS score {0} is outside [0.0, 10.0]")]
    OutOfRange(f64),
    #[error("advisory database line {line}: {message}")]
    Record { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bound {
    pub version: Version,
    pub inclusive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VersionRange {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Bound>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Bound>,
}

impl VersionRange {
    /// `< upper`
    pub fn below(upper: Version) -> Self {
        Self {
            lower: None,
            upper: Some(Bound {
                version: upper,
                inclusive: false,
            }),
        }
    }

    pub fn contains(&self, version: &Version) -> bool {
        let above_lower = self.lower.as_ref().is_none_or(|b| {
            if b.inclusive {
                version >= &b.version
            } else {
                version > &b.version
            }
        });
        let below_upper = self.upper.as_ref().is_none_or(|b| {
            if b.inclusive {
                version <= &b.version
            } else {
                version < &b.version
            }
        });
        above_lower && below_upper
    }

    pub fn is_well_formed(&self) -> bool {
        match (&self.lower, &self.upper) {
            (Some(lo), Some(hi)) => lo.version <= hi.version,
            _ => true,
        }
    }
}

impl fmt::Display for VersionRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(lo) = &self.lower {
            parts.push(format!(
                "{}{}",
                if lo.inclusive { ">=" } else { ">" },
                lo.version
            ));
        }
        if let Some(hi) = &self.upper {
            parts.push(format!(
                "{}{}",
                if hi.inclusive { "<=" } else { "<" },
                hi.version
            ));
        }
        if parts.is_empty() {
            f.write_str("*")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advisory {
    pub id: String,
    pub ecosystem: String,
    pub package: String,
    pub affected_ranges: Vec<VersionRange>,
    pub cvss_score: f64,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_in: Option<Version>,
}

impl Advisory {
    pub fn affects(&self, version: &Version) -> bool {
        self.affected_ranges.iter().any(|r| r.contains(version))
    }

    pub fn severity(&self) -> Severity {
        severity_from_cvss(self.cvss_score).unwrap_or(Severity::Critical)
    }

    fn check(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty advisory id".into());
        }
        if self.ecosystem.trim().is_empty() || self.package.trim().is_empty() {
            return Err(format!("{}: ecosystem and package are required", self.id));
        }
        if self.package != normalize_package(&self.ecosystem, &self.package) {
            return Err(format!(
                "{}: package `{}` is not normalized",
                self.id, self.package
            ));
        }
        if self.affected_ranges.is_empty() {
            return Err(format!("{}: affected_ranges must not be empty", self.id));
        }
        if let Some(range) = self.affected_ranges.iter().find(|r| !r.is_well_formed()) {
            return Err(format!("{}: range {range} has lower > upper", self.id));
        }
        if !(0.0..=10.0).contains(&self.cvss_score) {
            return Err(format!(
                "{}: cvss_score {} outside [0, 10]",
                self.id, self.cvss_score
            ));
        }
        Ok(())
    }
}

/// Map a CVSS v3 base score onto the qualitative scale.
pub fn severity_from_cvss(score: f64) -> Result<Severity, VulnDbError> {
    if !(0.0..=10.0).contains(&score) {
        return Err(VulnDbError::OutOfRange(score));
    }
    Ok(if score == 0.0 {
        Severity::Info
    } else if score < 4.0 {
        Severity::Low
    } else if score < 7.0 {
        Severity::Medium
    } else if score < 9.0 {
        Severity::High
    } else {
        Severity::Critical
    })
}

/// Lowercase; pypi names also fold `_` into `-`.
pub fn normalize_package(ecosystem: &str, package: &str) -> String {
    let lowered = package.trim().to_ascii_lowercase();
    if ecosystem.eq_ignore_ascii_case("pypi") {
        lowered.replace('_', "-")
    } else {
        lowered
    }
}

#[derive(Debug, Clone, Default)]
pub struct AdvisoryDb {
    advisories: Vec<Advisory>,
    index: BTreeMap<(String, String), Vec<usize>>,
}

impl AdvisoryDb {
    /// Parse newline-delimited records. Blank lines are skipped; any malformed
    /// record fails the whole load.
    pub fn from_ndjson(text: &str) -> Result<Self, VulnDbError> {
        let mut advisories = Vec::new();
        let mut ids = BTreeSet::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let advisory: Advisory =
                serde_json::from_str(line).map_err(|e| VulnDbError::Record {
                    line: line_no,
                    message: e.to_string(),
                })?;
            advisory.check().map_err(|message| VulnDbError::Record {
                line: line_no,
                message,
            })?;
            let key = (
                advisory.id.clone(),
                advisory.ecosystem.clone(),
                advisory.package.clone(),
            );
            if !ids.insert(key) {
                return Err(VulnDbError::Record {
                    line: line_no,
                    message: format!(
                        "duplicate advisory {} for {}",
                        advisory.id, advisory.package
                    ),
                });
            }
            advisories.push(advisory);
        }
        Ok(Self::from_advisories(advisories))
    }

    pub fn from_advisories(advisories: Vec<Advisory>) -> Self {
        let mut index: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for (i, adv) in advisories.iter().enumerate() {
            index
                .entry((
                    adv.ecosystem.to_ascii_lowercase(),
                    normalize_package(&adv.ecosystem, &adv.package),
                ))
                .or_default()
                .push(i);
        }
        Self { advisories, index }
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for adv in &self.advisories {
            out.push_str(&serde_json::to_string(adv).expect("advisory serializes"));
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.advisories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advisories.is_empty()
    }

    pub fn advisories(&self) -> &[Advisory] {
        &self.advisories
    }

    /// Advisories affecting `package@version`, highest score first, then id.
    pub fn match_package(
        &self,
        ecosystem: &str,
        package: &str,
        version: &Version,
    ) -> Vec<&Advisory> {
        let key = (
            ecosystem.to_ascii_lowercase(),
            normalize_package(ecosystem, package),
        );
        let mut hits: Vec<&Advisory> = self
            .index
            .get(&key)
            .into_iter()
            .flatten()
            .map(|i| &self.advisories[*i])
            .filter(|adv| adv.affects(version))
            .collect();
        hits.sort_by(|a, b| {
            b.cvss_score
                .total_cmp(&a.cvss_score)
                .then_with(|| a.id.cmp(&b.id))
        });
        hits
    }
}

/// Problems found by `validate_ndjson`, one per offending line.
pub fn validate_ndjson(text: &str) -> Vec<VulnDbError> {
    let mut problems = Vec::new();
    let mut ids = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str::<Advisory>(line)
            .map_err(|e| e.to_string())
            .and_then(|adv| adv.check().map(|_| adv));
        match record {
            Ok(adv) => {
                if !ids.insert((adv.id.clone(), adv.ecosystem.clone(), adv.package.clone())) {
                    problems.push(VulnDbError::Record {
                        line: idx + 1,
                        message: format!("duplicate advisory {} for {}", adv.id, adv.package),
                    });
                }
            }
            Err(message) => problems.push(VulnDbError::Record {
                line: idx + 1,
                message,
            }),
        }
    }
    problems
}
