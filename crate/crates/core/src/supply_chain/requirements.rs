use std::collections::BTreeSet;
use std::fmt;

use crate::vuln_db::{normalize_package, parse_version, Version};

use super::SupplyChainError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Constraint {
    Exact(Version),
    Minimum(Version),
    Unconstrained,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::Exact(v) => write!(f, "=={v}"),
            Constraint::Minimum(v) => write!(f, ">={v}"),
            Constraint::Unconstrained => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Requirement {
    pub package: String,
    pub constraint: Constraint,
    /// 1-based line in the manifest.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DependencyManifest {
    pub entries: Vec<Requirement>,
}

impl DependencyManifest {
    pub fn contains(&self, package: &str) -> bool {
        let wanted = normalize_package("pypi", package);
        self.entries.iter().any(|e| e.package == wanted)
    }
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')
}

/// Parse a pip requirements file: `pkg==v`, `pkg>=v` or a bare `pkg` per
/// line. Extras (`pkg[extra]`) and environment markers (`; ...`) are
/// accepted and ignored.
pub fn parse_requirements(text: &str) -> Result<DependencyManifest, SupplyChainError> {
    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let invalid = |reason: &str| SupplyChainError::InvalidRequirementLine {
            line: line_no,
            reason: reason.to_string(),
        };
        let line = match raw_line
            .find(" #")
            .or_else(|| raw_line.starts_with('#').then_some(0))
        {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let line = line.split(';').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('-') {
            return Err(invalid("pip options are not supported"));
        }

        let name_end = line.find(|c: char| !is_name_char(c)).unwrap_or(line.len());
        let name = &line[..name_end];
        if name.is_empty() {
            return Err(invalid("missing package name"));
        }
        let mut rest = line[name_end..].trim_start();
        if let Some(after) = rest.strip_prefix('[') {
            let close = after
                .find(']')
                .ok_or_else(|| invalid("unterminated extras"))?;
            rest = after[close + 1..].trim_start();
        }

        let constraint = if rest.is_empty() {
            Constraint::Unconstrained
        } else if let Some(v) = rest.strip_prefix("==") {
            Constraint::Exact(parse_version(v.trim()).map_err(|_| invalid("bad version"))?)
        } else if let Some(v) = rest.strip_prefix(">=") {
            Constraint::Minimum(parse_version(v.trim()).map_err(|_| invalid("bad version"))?)
        } else {
            return Err(invalid("unsupported version specifier"));
        };

        let package = normalize_package("pypi", name);
        if !seen.insert(package.clone()) {
            return Err(invalid("duplicate package"));
        }
        entries.push(Requirement {
            package,
            constraint,
            line: line_no,
        });
    }
    Ok(DependencyManifest { entries })
}
