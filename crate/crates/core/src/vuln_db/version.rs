use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::VulnDbError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PreReleaseTag {
    Alpha,
    Beta,
    Rc,
}

impl PreReleaseTag {
    pub fn as_str(self) -> &'static str {
        match self {
            PreReleaseTag::Alpha => "a",
            PreReleaseTag::Beta => "b",
            PreReleaseTag::Rc => "rc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PreRelease {
    pub tag: PreReleaseTag,
    pub number: u64,
}

/// A package version: `[epoch:]N(.N)*[(a|b|rc|alpha|beta)N][suffix]`.
///
/// The optional suffix holds distribution revisions and upstream
/// qualifiers (`-10+deb10u2`, `n`, `+dfsg-3`); it is compared with the
/// dpkg character ordering after release and pre-release are equal.
/// Trailing zero release segments are kept for display but compare equal.
#[derive(Debug, Clone)]
pub struct Version {
    epoch: u64,
    release: Vec<u64>,
    pre_release: Option<PreRelease>,
    suffix: String,
    raw: String,
}

impl Version {
    pub fn parse(text: &str) -> Result<Self, VulnDbError> {
        parse_version(text)
    }

    pub fn release_segments(&self) -> &[u64] {
        &self.release
    }

    pub fn pre_release(&self) -> Option<PreRelease> {
        self.pre_release
    }

    pub fn suffix(&self) -> &str {
        &self.suffix
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }
}

const PRE_TAGS: [(&str, PreReleaseTag); 5] = [
    ("alpha", PreReleaseTag::Alpha),
    ("beta", PreReleaseTag::Beta),
    ("rc", PreReleaseTag::Rc),
    ("a", PreReleaseTag::Alpha),
    ("b", PreReleaseTag::Beta),
];

fn take_digits(s: &str) -> (&str, &str) {
    let end = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    s.split_at(end)
}

fn parse_number(digits: &str, whole: &str) -> Result<u64, VulnDbError> {
    digits
        .parse()
        .map_err(|_| VulnDbError::InvalidVersion(whole.to_string()))
}

pub fn parse_version(text: &str) -> Result<Version, VulnDbError> {
    let raw = text.trim();
    let invalid = || VulnDbError::InvalidVersion(text.to_string());
    if raw.is_empty() || raw.chars().any(char::is_whitespace) {
        return Err(invalid());
    }

    let mut rest = raw;
    let mut epoch = 0;
    if let Some((head, tail)) = raw.split_once(':') {
        if head.is_empty() || !head.bytes().all(|b| b.is_ascii_digit()) {
            return Err(invalid());
        }
        epoch = parse_number(head, text)?;
        rest = tail;
    }

    let mut release = Vec::new();
    loop {
        let (digits, tail) = take_digits(rest);
        if digits.is_empty() {
            return Err(invalid());
        }
        release.push(parse_number(digits, text)?);
        rest = tail;
        match rest.strip_prefix('.') {
            Some(after) if after.starts_with(|c: char| c.is_ascii_digit()) => rest = after,
            _ => break,
        }
    }

    let mut pre_release = None;
    let lowered = rest.to_ascii_lowercase();
    for (name, tag) in PRE_TAGS {
        if let Some(after) = lowered.strip_prefix(name) {
            let (digits, _) = take_digits(after);
            if !digits.is_empty() {
                pre_release = Some(PreRelease {
                    tag,
                    number: parse_number(digits, text)?,
                });
                rest = &rest[name.len() + digits.len()..];
                break;
            }
        }
    }

    let suffix_ok = rest.is_empty()
        || (rest
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '+' | '~' | '-' | '_'))
            && !rest.contains("..")
            && !rest.ends_with('.'));
    if !suffix_ok {
        return Err(invalid());
    }

    Ok(Version {
        epoch,
        release,
        pre_release,
        suffix: rest.to_string(),
        raw: raw.to_string(),
    })
}

/// dpkg character weight: `~` before end-of-string, letters before symbols.
fn char_order(c: Option<u8>) -> i32 {
    match c {
        None => 0,
        Some(b'~') => -1,
        Some(c) if c.is_ascii_digit() => 0,
        Some(c) if c.is_ascii_alphabetic() => i32::from(c),
        Some(c) => i32::from(c) + 256,
    }
}

/// The dpkg `verrevcmp` algorithm over alternating non-digit/digit runs.
fn compare_suffix(a: &[u8], b: &[u8]) -> Ordering {
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        while (i < a.len() && !a[i].is_ascii_digit()) || (j < b.len() && !b[j].is_ascii_digit()) {
            let (ac, bc) = (char_order(a.get(i).copied()), char_order(b.get(j).copied()));
            if ac != bc {
                return ac.cmp(&bc);
            }
            i += 1;
            j += 1;
        }
        while a.get(i) == Some(&b'0') {
            i += 1;
        }
        while b.get(j) == Some(&b'0') {
            j += 1;
        }
        let mut first_diff = Ordering::Equal;
        while i < a.len() && j < b.len() && a[i].is_ascii_digit() && b[j].is_ascii_digit() {
            if first_diff == Ordering::Equal {
                first_diff = a[i].cmp(&b[j]);
            }
            i += 1;
            j += 1;
        }
        if a.get(i).is_some_and(u8::is_ascii_digit) {
            return Ordering::Greater;
        }
        if b.get(j).is_some_and(u8::is_ascii_digit) {
            return Ordering::Less;
        }
        if first_diff != Ordering::Equal {
            return first_diff;
        }
    }
    Ordering::Equal
}

pub fn compare_versions(a: &Version, b: &Version) -> Ordering {
    a.epoch
        .cmp(&b.epoch)
        .then_with(|| {
            let len = a.release.len().max(b.release.len());
            (0..len)
                .map(|i| {
                    let x = a.release.get(i).copied().unwrap_or(0);
                    let y = b.release.get(i).copied().unwrap_or(0);
                    x.cmp(&y)
                })
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then_with(|| match (a.pre_release, b.pre_release) {
            (None, None) => Ordering::Equal,
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (Some(x), Some(y)) => x.cmp(&y),
        })
        .then_with(|| compare_suffix(a.suffix.as_bytes(), b.suffix.as_bytes()))
}

impl PartialEq for Version {
    fn eq(&self, other: &Self) -> bool {
        compare_versions(self, other) == Ordering::Equal
    }
}

impl Eq for Version {}

impl PartialOrd for Version {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Version {
    fn cmp(&self, other: &Self) -> Ordering {
        compare_versions(self, other)
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl FromStr for Version {
    type Err = VulnDbError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_version(s)
    }
}

impl Serialize for Version {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for Version {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_version(&text).map_err(serde::de::Error::custom)
    }
}
