use std::fmt;
use std::str::FromStr;

use super::SupplyChainError;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Keyword {
    From,
    Run,
    Copy,
    Add,
    Env,
    User,
    Expose,
    Cmd,
    Entrypoint,
    Workdir,
    Arg,
    Label,
    /// Instructions outside the audited set (HEALTHCHECK, SHELL, ...).
    Other(String),
}

impl Keyword {
    pub fn as_str(&self) -> &str {
        match self {
            Keyword::From => "FROM",
            Keyword::Run => "RUN",
            Keyword::Copy => "COPY",
            Keyword::Add => "ADD",
            Keyword::Env => "ENV",
            Keyword::User => "USER",
            Keyword::Expose => "EXPOSE",
            Keyword::Cmd => "CMD",
            Keyword::Entrypoint => "ENTRYPOINT",
            Keyword::Workdir => "WORKDIR",
            Keyword::Arg => "ARG",
            Keyword::Label => "LABEL",
            Keyword::Other(name) => name,
        }
    }
}

impl FromStr for Keyword {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "FROM" => Keyword::From,
            "RUN" => Keyword::Run,
            "COPY" => Keyword::Copy,
            "ADD" => Keyword::Add,
            "ENV" => Keyword::Env,
            "USER" => Keyword::User,
            "EXPOSE" => Keyword::Expose,
            "CMD" => Keyword::Cmd,
            "ENTRYPOINT" => Keyword::Entrypoint,
            "WORKDIR" => Keyword::Workdir,
            "ARG" => Keyword::Arg,
            "LABEL" => Keyword::Label,
            other => Keyword::Other(other.to_string()),
        })
    }
}

impl fmt::Display for Keyword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub keyword: Keyword,
    pub argument: String,
    /// 1-based line of the instruction's first physical line.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseImage {
    pub name: String,
    pub tag: String,
}

impl BaseImage {
    /// Split a reference on its last `:`; a missing tag means `latest`.
    /// Digests (`@sha256:...`) are dropped and registry ports are not
    /// mistaken for tags.
    pub fn parse(reference: &str) -> Self {
        let reference = reference.split('@').next().unwrap_or(reference);
        match reference.rsplit_once(':') {
            Some((name, tag)) if !tag.contains('/') && !tag.is_empty() => Self {
                name: name.to_string(),
                tag: tag.to_string(),
            },
            _ => Self {
                name: reference.to_string(),
                tag: "latest".to_string(),
            },
        }
    }

    /// Catalog key, `name:tag`.
    pub fn key(&self) -> String {
        format!("{}:{}", self.name, self.tag)
    }
}

impl fmt::Display for BaseImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name, self.tag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSpec {
    pub base_image: BaseImage,
    pub instructions: Vec<Instruction>,
}

impl ImageSpec {
    /// Instructions of the final build stage (after the last FROM).
    pub fn final_stage(&self) -> &[Instruction] {
        let start = self
            .instructions
            .iter()
            .rposition(|i| i.keyword == Keyword::From)
            .map_or(0, |p| p + 1);
        &self.instructions[start..]
    }

    fn last(&self, keyword: Keyword) -> Option<&Instruction> {
        self.final_stage()
            .iter()
            .rev()
            .find(|i| i.keyword == keyword)
    }

    /// Effective user of the final stage, if any USER was set.
    pub fn user(&self) -> Option<&str> {
        self.last(Keyword::User).map(|i| i.argument.trim())
    }

    pub fn workdir(&self) -> Option<&str> {
        self.last(Keyword::Workdir).map(|i| i.argument.trim())
    }

    /// The command a container of this image runs: ENTRYPOINT followed by
    /// CMD, shell forms wrapped in `/bin/sh -c`.
    pub fn command(&self) -> Option<Vec<String>> {
        let entry = self
            .last(Keyword::Entrypoint)
            .map(|i| command_words(&i.argument));
        let cmd = self.last(Keyword::Cmd).map(|i| command_words(&i.argument));
        match (entry, cmd) {
            (Some(CommandForm::Exec(mut e)), Some(CommandForm::Exec(c))) => {
                e.extend(c);
                Some(e)
            }
            (Some(form), _) => Some(form.into_argv()),
            (None, Some(form)) => Some(form.into_argv()),
            (None, None) => None,
        }
        .filter(|argv| !argv.is_empty())
    }

    /// Render back to build-file text, one instruction per line.
    pub fn to_containerfile(&self) -> String {
        self.instructions
            .iter()
            .map(|i| format!("{} {}\n", i.keyword, i.argument))
            .collect()
    }
}

enum CommandForm {
    Exec(Vec<String>),
    Shell(String),
}

impl CommandForm {
    fn into_argv(self) -> Vec<String> {
        match self {
            CommandForm::Exec(argv) => argv,
            CommandForm::Shell(text) => vec!["/bin/sh".into(), "-c".into(), text],
        }
    }
}

fn command_words(argument: &str) -> CommandForm {
    let trimmed = argument.trim();
    if trimmed.starts_with('[') {
        if let Ok(argv) = serde_json::from_str::<Vec<String>>(trimmed) {
            return CommandForm::Exec(argv);
        }
    }
    CommandForm::Shell(trimmed.to_string())
}

/// Parse a Dockerfile/Containerfile. Continuation lines are joined, comment
/// lines dropped; the last FROM determines the base image.
pub fn parse_containerfile(text: &str) -> Result<ImageSpec, SupplyChainError> {
    let mut instructions = Vec::new();
    let mut pending: Option<(usize, String)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        let trimmed = line.trim_start();
        if trimmed.starts_with('#') {
            continue;
        }
        let (content, continues) = match line.trim_end().strip_suffix('\\') {
            Some(head) => (head, true),
            None => (line, false),
        };
        let (start, mut buf) = pending.take().unwrap_or((idx + 1, String::new()));
        if !buf.is_empty() {
            buf.push(' ');
        }
        buf.push_str(content.trim());
        if continues {
            pending = Some((start, buf));
            continue;
        }
        if buf.trim().is_empty() {
            continue;
        }
        instructions.push(split_instruction(&buf, start));
    }
    if let Some((start, buf)) = pending {
        if !buf.trim().is_empty() {
            instructions.push(split_instruction(&buf, start));
        }
    }

    let from = instructions
        .iter()
        .rev()
        .find(|i| i.keyword == Keyword::From)
        .ok_or(SupplyChainError::NoFromInstruction)?;
    let reference = from
        .argument
        .split_whitespace()
        .find(|w| !w.starts_with("--"))
        .ok_or(SupplyChainError::NoFromInstruction)?;

    Ok(ImageSpec {
        base_image: BaseImage::parse(reference),
        instructions,
    })
}

fn split_instruction(text: &str, line: usize) -> Instruction {
    let text = text.trim();
    let (word, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
    Instruction {
        keyword: word.parse().expect("infallible"),
        argument: rest.split_whitespace().collect::<Vec<_>>().join(" "),
        line,
    }
}

/// A package pinned by a RUN install command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstalledPackage {
    pub ecosystem: String,
    pub package: String,
    pub version: String,
    pub line: usize,
}

/// Best-effort extraction of `install name=version` pins from RUN
/// instructions (apt/apt-get as `debian`, pip as `pypi`, apk as `alpine`).
pub fn pinned_installs(spec: &ImageSpec) -> Vec<InstalledPackage> {
    let mut out = Vec::new();
    for instr in spec
        .instructions
        .iter()
        .filter(|i| i.keyword == Keyword::Run)
    {
        for command in instr.argument.split(['&', ';', '|']) {
            let words: Vec<&str> = command.split_whitespace().collect();
            let Some(pos) = words.iter().position(|w| *w == "install") else {
                continue;
            };
            let manager = words[..pos]
                .iter()
                .rev()
                .find(|w| !w.starts_with('-'))
                .map(|w| w.rsplit('/').next().unwrap_or(w))
                .unwrap_or_default();
            let ecosystem = match manager {
                "apt" | "apt-get" | "aptitude" => "debian",
                "pip" | "pip3" => "pypi",
                "apk" => "alpine",
                m if m.starts_with("python") => "pypi",
                _ => continue,
            };
            for word in &words[pos + 1..] {
                if word.starts_with('-') {
                    continue;
                }
                let word = word.trim_matches(|c| c == '"' || c == '\'');
                let pair = if ecosystem == "pypi" {
                    word.split_once("==")
                } else {
                    word.split_once('=')
                };
                if let Some((name, version)) = pair {
                    if !name.is_empty() && !version.is_empty() {
                        out.push(InstalledPackage {
                            ecosystem: ecosystem.to_string(),
                            package: name.to_string(),
                            version: version.to_string(),
                            line: instr.line,
                        });
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn base_image_with_prerelease_tag() {
        let spec = parse_containerfile("FROM python:3.10.0a7-buster\n").unwrap();
        assert_eq!(
            spec.base_image,
            BaseImage {
                name: "python".into(),
                tag: "3.10.0a7-buster".into()
            }
        );
    }

    #[test]
    fn last_from_wins() {
        let spec = parse_containerfile("FROM a:1\nFROM b:2").unwrap();
        assert_eq!(spec.base_image.key(), "b:2");
    }

    #[test]
    fn missing_from() {
        assert_eq!(
            parse_containerfile("RUN echo hi\n# FROM x\n"),
            Err(SupplyChainError::NoFromInstruction)
        );
    }

    #[test]
    fn default_tag_and_registry_port() {
        assert_eq!(BaseImage::parse("debian").key(), "debian:latest");
        assert_eq!(
            BaseImage::parse("localhost:5000/py").key(),
            "localhost:5000/py:latest"
        );
        assert_eq!(BaseImage::parse("localhost:5000/py:3.11").tag, "3.11");
        assert_eq!(BaseImage::parse("debian:10@sha256:abc").key(), "debian:10");
    }

    #[test]
    fn continuations_and_comments() {
        let text = "# syntax=docker/dockerfile:1\nFROM --platform=linux/amd64 debian:10 AS base\nRUN apt-get update && \\\n    # inline comment\n    apt-get install -y libc6=2.28-10 \\\n    curl=7.64.0-4\nUSER train\nCMD [\"python3\", \"main.py\"]\n";
        let spec = parse_containerfile(text).unwrap();
        assert_eq!(spec.base_image.key(), "debian:10");
        let kinds: Vec<_> = spec
            .instructions
            .iter()
            .map(|i| i.keyword.as_str())
            .collect();
        assert_eq!(kinds, ["FROM", "RUN", "USER", "CMD"]);
        assert_eq!(spec.instructions[1].line, 3);
        assert_eq!(
            spec.instructions[1].argument,
            "apt-get update && apt-get install -y libc6=2.28-10 curl=7.64.0-4"
        );
        assert_eq!(spec.user(), Some("train"));
        assert_eq!(spec.command().unwrap(), ["python3", "main.py"]);

        let pins = pinned_installs(&spec);
        assert_eq!(pins.len(), 2);
        assert_eq!(pins[0].package, "libc6");
        assert_eq!(pins[1].version, "7.64.0-4");
    }

    #[test]
    fn entrypoint_plus_cmd_and_shell_form() {
        let spec =
            parse_containerfile("FROM x\nENTRYPOINT [\"python3\"]\nCMD [\"main.py\"]").unwrap();
        assert_eq!(spec.command().unwrap(), ["python3", "main.py"]);
        let spec = parse_containerfile("FROM x\nCMD python3 main.py").unwrap();
        assert_eq!(
            spec.command().unwrap(),
            ["/bin/sh", "-c", "python3 main.py"]
        );
        assert!(parse_containerfile("FROM x").unwrap().command().is_none());
    }

    #[test]
    fn pip_pins_in_run() {
        let spec =
            parse_containerfile("FROM x\nRUN pip install --no-cache-dir requests==2.18.4").unwrap();
        let pins = pinned_installs(&spec);
        assert_eq!(pins.len(), 1);
        assert_eq!(
            (pins[0].ecosystem.as_str(), pins[0].version.as_str()),
            ("pypi", "2.18.4")
        );
    }

    fn instruction() -> impl Strategy<Value = (String, String)> {
        let kw = prop::sample::select(vec![
            "RUN",
            "COPY",
            "ADD",
            "ENV",
            "USER",
            "EXPOSE",
            "CMD",
            "ENTRYPOINT",
            "WORKDIR",
            "ARG",
            "LABEL",
        ]);
        (kw, "[a-z0-9=./-]{1,8}( [a-z0-9=./-]{1,8}){0,3}").prop_map(|(k, a)| (k.to_string(), a))
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(base in "[a-z]{1,6}:[0-9]{1,2}", body in prop::collection::vec(instruction(), 0..8)) {
            let mut text = format!("FROM {base}\n");
            for (k, a) in &body {
                text.push_str(&format!("{k} {a}\n"));
            }
            let spec = parse_containerfile(&text).unwrap();
            let again = parse_containerfile(&spec.to_containerfile()).unwrap();
            let strip = |s: &ImageSpec| s.instructions.iter().map(|i| (i.keyword.clone(), i.argument.clone())).collect::<Vec<_>>();
            prop_assert_eq!(strip(&spec), strip(&again));
            prop_assert_eq!(spec.base_image, again.base_image);
        }
    }
}
