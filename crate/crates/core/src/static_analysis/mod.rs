//! SAST rules over syntax trees and secret patterns over raw text.

mod pattern;
mod sast;
mod secrets;

use std::collections::BTreeSet;

use regex::Regex;
use serde::Deserialize;
use thiserror::Error;

use crate::model::Severity;

pub use pattern::{NodePattern, NodePatternSpec};
pub use sast::run_sast;
pub use secrets::{detect_secrets, redact, shannon_entropy};

const BUILTIN_RULESET: &str = include_str!("builtin.toml");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RulesetError {
    #[error("ruleset is not valid: {0}")]
    Parse(String),
    #[error("rule id `{0}` is defined more than once")]
    DuplicateId(String),
    #[error("rule `{rule}` references unknown node kind `{kind}`")]
    UnknownNodeKind { rule: String, kind: String },
    #[error("rule `{rule}` has an invalid regex: {message}")]
    BadRegex { rule: String, message: String },
}

#[derive(Debug, Clone)]
pub struct SastRule {
    pub id: String,
    pub severity: Severity,
    pub message: String,
    pub matcher: NodePattern,
}

#[derive(Debug, Clone)]
pub struct SecretPattern {
    pub id: String,
    pub severity: Severity,
    pub regex: Regex,
    pub description: String,
    /// Capture group whose text must reach `min_entropy`; 0 is the whole match.
    pub group: usize,
    pub min_entropy: Option<f64>,
}

impl SecretPattern {
    pub fn new(
        id: &str,
        severity: Severity,
        regex: &str,
        description: &str,
    ) -> Result<Self, RulesetError> {
        Ok(Self {
            id: id.to_string(),
            severity,
            regex: Regex::new(regex).map_err(|e| RulesetError::BadRegex {
                rule: id.to_string(),
                message: e.to_string(),
            })?,
            description: description.to_string(),
            group: 0,
            min_entropy: None,
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SastRuleSpec {
    id: String,
    severity: Severity,
    message: String,
    #[serde(rename = "match")]
    matcher: NodePatternSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SecretSpec {
    id: String,
    severity: Severity,
    regex: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    group: usize,
    min_entropy: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RulesetSpec {
    #[serde(default)]
    sast: Vec<SastRuleSpec>,
    #[serde(default)]
    secret: Vec<SecretSpec>,
}

#[derive(Debug, Clone, Default)]
pub struct Ruleset {
    pub sast: Vec<SastRule>,
    pub secrets: Vec<SecretPattern>,
}

impl Ruleset {
    /// The rules shipped with the tool.
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN_RULESET).expect("built-in ruleset is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, RulesetError> {
        let spec: RulesetSpec =
            toml::from_str(text).map_err(|e| RulesetError::Parse(e.to_string()))?;
        let sast = spec
            .sast
            .iter()
            .map(|r| {
                Ok(SastRule {
                    id: r.id.clone(),
                    severity: r.severity,
                    message: r.message.clone(),
                    matcher: NodePattern::compile(&r.matcher, &r.id)?,
                })
            })
            .collect::<Result<Vec<_>, RulesetError>>()?;
        let secrets = spec
            .secret
            .iter()
            .map(|s| {
                let mut p = SecretPattern::new(&s.id, s.severity, &s.regex, &s.description)?;
                if s.group >= p.regex.captures_len() {
                    return Err(RulesetError::BadRegex {
                        rule: s.id.clone(),
                        message: format!("no capture group {}", s.group),
                    });
                }
                p.group = s.group;
                p.min_entropy = s.min_entropy;
                Ok(p)
            })
            .collect::<Result<Vec<_>, RulesetError>>()?;
        let ruleset = Self { sast, secrets };
        ruleset.check_unique()?;
        Ok(ruleset)
    }

    fn check_unique(&self) -> Result<(), RulesetError> {
        let mut seen = BTreeSet::new();
        for id in self
            .sast
            .iter()
            .map(|r| &r.id)
            .chain(self.secrets.iter().map(|s| &s.id))
        {
            if !seen.insert(id) {
                return Err(RulesetError::DuplicateId(id.clone()));
            }
        }
        Ok(())
    }

    /// Add the rules of `other`; a rule with an existing id replaces it.
    pub fn extend(&mut self, other: Ruleset) {
        for rule in other.sast {
            self.sast.retain(|r| r.id != rule.id);
            self.sast.push(rule);
        }
        for pattern in other.secrets {
            self.secrets.retain(|p| p.id != pattern.id);
            self.secrets.push(pattern);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_ruleset_loads() {
        let rs = Ruleset::builtin();
        let ids: Vec<&str> = rs.sast.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(
            ids,
            [
                "sast.deserialization-untrusted",
                "sast.sql-injection",
                "sast.hardcoded-password",
                "sast.eval-exec",
                "sast.subprocess-shell"
            ]
        );
        assert_eq!(rs.secrets.len(), 3);
        assert_eq!(rs.sast[0].severity, Severity::Medium);
        assert!(rs.sast[1..].iter().all(|r| r.severity == Severity::High));
        assert!(rs.secrets.iter().all(|s| s.severity == Severity::High));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "[[secret]]\nid = 'a'\nseverity = 'low'\nregex = 'x'\n[[secret]]\nid = 'a'\nseverity = 'low'\nregex = 'y'\n";
        assert_eq!(
            Ruleset::from_toml(text).unwrap_err(),
            RulesetError::DuplicateId("a".into())
        );
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(matches!(
            Ruleset::from_toml("[[sast]]\nid = 1"),
            Err(RulesetError::Parse(_))
        ));
        let bad_group = "[[secret]]\nid = 'a'\nseverity = 'low'\nregex = 'x'\ngroup = 2\n";
        assert!(matches!(
            Ruleset::from_toml(bad_group),
            Err(RulesetError::BadRegex { .. })
        ));
    }

    #[test]
    fn extend_overrides_by_id() {
        let mut rs = Ruleset::builtin();
        let extra = Ruleset::from_toml(
            "[[sast]]\nid = 'sast.eval-exec'\nseverity = 'low'\nmessage = 'm'\n[sast.match]\nkind = 'call'\n\n[[sast]]\nid = 'x.new'\nseverity = 'low'\nmessage = 'm'\n[sast.match]\nkind = 'lambda'\n",
        )
        .unwrap();
        rs.extend(extra);
        assert_eq!(rs.sast.len(), 6);
        assert_eq!(
            rs.sast
                .iter()
                .find(|r| r.id == "sast.eval-exec")
                .unwrap()
                .severity,
            Severity::Low
        );
    }
}
