//! Turtle writer and a reader for the subset the writer emits (plus comments
//! and arbitrary whitespace).

use std::collections::BTreeMap;
use std::fmt::Write;

use super::graph::{CodeGraph, Object, Triple};
use super::CodeGraphError;

fn is_local_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn write_iri(out: &mut String, iri: &str, prefixes: &BTreeMap<String, String>) {
    for (prefix, base) in prefixes {
        if let Some(local) = iri.strip_prefix(base.as_str()) {
            if is_local_name(local) {
                let _ = write!(out, "{prefix}:{local}");
                return;
            }
        }
    }
    let _ = write!(out, "<{iri}>");
}

fn write_object(out: &mut String, obj: &Object, prefixes: &BTreeMap<String, String>) {
    match obj {
        Object::Iri(iri) => write_iri(out, iri, prefixes),
        Object::Int(n) => {
            let _ = write!(out, "{n}");
        }
        Object::Str(s) => {
            out.push('"');
            for c in s.chars() {
                match c {
                    '"' => out.push_str("\\\""),
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    '\r' => out.push_str("\\r"),
                    '\t' => out.push_str("\\t"),
                    c if (c as u32) < 0x20 || c as u32 == 0x7f => {
                        let _ = write!(out, "\\u{:04X}", c as u32);
                    }
                    c => out.push(c),
                }
            }
            out.push('"');
        }
    }
}

/// Render the graph as Turtle. Prefixes come first, then one block per
/// subject; subjects, predicates and objects are sorted, so equal graphs give
/// byte-identical text.
pub fn serialize_graph(graph: &CodeGraph) -> String {
    let mut out = String::new();
    for (prefix, base) in &graph.prefixes {
        let _ = writeln!(out, "@prefix {prefix}: <{base}> .");
    }
    let mut current: Option<(&str, &str)> = None;
    for t in &graph.triples {
        match current {
            Some((s, p)) if s == t.subject && p == t.predicate => out.push_str(", "),
            Some((s, _)) if s == t.subject => {
                out.push_str(" ;\n    ");
                write_iri(&mut out, &t.predicate, &graph.prefixes);
                out.push(' ');
            }
            prev => {
                if prev.is_some() {
                    out.push_str(" .\n");
                }
                out.push('\n');
                write_iri(&mut out, &t.subject, &graph.prefixes);
                out.push(' ');
                write_iri(&mut out, &t.predicate, &graph.prefixes);
                out.push(' ');
            }
        }
        write_object(&mut out, &t.object, &graph.prefixes);
        current = Some((&t.subject, &t.predicate));
    }
    if current.is_some() {
        out.push_str(" .\n");
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Prefix,
    Iri(String),
    Pname(String, String),
    Str(String),
    Int(i64),
    Punct(char),
}

struct Reader<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
}

impl Reader<'_> {
    fn err(&self, message: impl Into<String>) -> CodeGraphError {
        CodeGraphError::InvalidTurtle {
            line: self.line,
            message: message.into(),
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next();
        if c == Some('\n') {
            self.line += 1;
        }
        c
    }

    fn next_tok(&mut self) -> Result<Option<Tok>, CodeGraphError> {
        loop {
            match self.chars.peek() {
                None => return Ok(None),
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('#') => {
                    while self.chars.peek().is_some_and(|c| *c != '\n') {
                        self.bump();
                    }
                }
                Some(_) => break,
            }
        }
        let c = self.bump().expect("peeked");
        match c {
            '<' => {
                let mut iri = String::new();
                loop {
                    match self.bump() {
                        Some('>') => return Ok(Some(Tok::Iri(iri))),
                        Some(c) if c.is_whitespace() => return Err(self.err("whitespace in IRI")),
                        Some(c) => iri.push(c),
                        None => return Err(self.err("unterminated IRI")),
                    }
                }
            }
            '"' => {
                let mut s = String::new();
                loop {
                    if matches!(self.chars.peek(), Some('\n') | None) {
                        return Err(self.err("unterminated string"));
                    }
                    match self.bump() {
                        Some('"') => return Ok(Some(Tok::Str(s))),
                        Some('\\') => match self.bump() {
                            Some('n') => s.push('\n'),
                            Some('r') => s.push('\r'),
                            Some('t') => s.push('\t'),
                            Some('"') => s.push('"'),
                            Some('\\') => s.push('\\'),
                            Some('u') => {
                                let hex: String = (0..4).filter_map(|_| self.bump()).collect();
                                let ch = u32::from_str_radix(&hex, 16)
                                    .ok()
                                    .and_then(char::from_u32)
                                    .ok_or_else(|| self.err("bad \\u escape"))?;
                                s.push(ch);
                            }
                            _ => return Err(self.err("bad string escape")),
                        },
                        None => return Err(self.err("unterminated string")),
                        Some(c) => s.push(c),
                    }
                }
            }
            '.' | ';' | ',' => Ok(Some(Tok::Punct(c))),
            '@' => {
                let word: String =
                    std::iter::from_fn(|| self.chars.next_if(|c| c.is_ascii_alphabetic()))
                        .collect();
                if word == "prefix" {
                    Ok(Some(Tok::Prefix))
                } else {
                    Err(self.err(format!("unknown directive @{word}")))
                }
            }
            c if c == '-' || c.is_ascii_digit() => {
                let mut s = c.to_string();
                while let Some(d) = self.chars.next_if(|d| d.is_ascii_digit()) {
                    s.push(d);
                }
                s.parse()
                    .map(|n| Some(Tok::Int(n)))
                    .map_err(|_| self.err(format!("bad integer `{s}`")))
            }
            c if c.is_ascii_alphabetic() || c == ':' => {
                let mut word = c.to_string();
                while let Some(d) = self
                    .chars
                    .next_if(|d| d.is_ascii_alphanumeric() || matches!(d, '_' | '-' | ':'))
                {
                    word.push(d);
                }
                let (p, l) = word
                    .split_once(':')
                    .ok_or_else(|| self.err(format!("unexpected `{word}`")))?;
                Ok(Some(Tok::Pname(p.to_string(), l.to_string())))
            }
            c => Err(self.err(format!("unexpected character `{c}`"))),
        }
    }
}

/// Read a Turtle document written by [`serialize_graph`].
pub fn parse_turtle(text: &str) -> Result<CodeGraph, CodeGraphError> {
    let mut r = Reader {
        chars: text.chars().peekable(),
        line: 1,
    };
    let mut graph = CodeGraph {
        triples: Default::default(),
        prefixes: BTreeMap::new(),
    };
    let resolve = |graph: &CodeGraph, r: &Reader<'_>, tok: Tok| -> Result<String, CodeGraphError> {
        match tok {
            Tok::Iri(i) => Ok(i),
            Tok::Pname(p, l) => graph
                .prefixes
                .get(&p)
                .map(|base| format!("{base}{l}"))
                .ok_or_else(|| r.err(format!("undeclared prefix `{p}`"))),
            other => Err(r.err(format!("expected IRI, found {other:?}"))),
        }
    };
    while let Some(tok) = r.next_tok()? {
        if tok == Tok::Prefix {
            let Some(Tok::Pname(p, l)) = r.next_tok()? else {
                return Err(r.err("expected prefix name"));
            };
            if !l.is_empty() {
                return Err(r.err("prefix name must end with `:`"));
            }
            let Some(Tok::Iri(base)) = r.next_tok()? else {
                return Err(r.err("expected prefix IRI"));
            };
            if r.next_tok()? != Some(Tok::Punct('.')) {
                return Err(r.err("expected `.` after prefix"));
            }
            graph.prefixes.insert(p, base);
            continue;
        }
        let subject = resolve(&graph, &r, tok)?;
        'predicates: loop {
            let tok = r.next_tok()?.ok_or_else(|| r.err("expected predicate"))?;
            let predicate = resolve(&graph, &r, tok)?;
            loop {
                let object = match r.next_tok()? {
                    Some(Tok::Str(s)) => Object::Str(s),
                    Some(Tok::Int(n)) => Object::Int(n),
                    Some(t @ (Tok::Iri(_) | Tok::Pname(..))) => {
                        Object::Iri(resolve(&graph, &r, t)?)
                    }
                    _ => return Err(r.err("expected object")),
                };
                graph.insert(Triple::new(&subject, &predicate, object));
                match r.next_tok()? {
                    Some(Tok::Punct(',')) => continue,
                    Some(Tok::Punct(';')) => continue 'predicates,
                    Some(Tok::Punct('.')) => break 'predicates,
                    _ => return Err(r.err("expected `,`, `;` or `.`")),
                }
            }
        }
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code_graph::{graph_from_trees, parse_source};
    use crate::model::TrainMetadata;

    fn hello_graph() -> CodeGraph {
        let tree = parse_source("main.py", b"print(\"hello\")", "python").unwrap();
        let meta = TrainMetadata::new("hello", "1", "me").unwrap();
        graph_from_trees(&[("main.py".into(), tree)], &meta)
    }

    #[test]
    fn empty_graph_is_prefix_only() {
        assert_eq!(
            serialize_graph(&CodeGraph::new()),
            "@prefix pasta: <urn:pasta:vocab#> .\n"
        );
    }

    #[test]
    fn round_trip() {
        let g = hello_graph();
        let text = serialize_graph(&g);
        assert_eq!(parse_turtle(&text).unwrap(), g);
    }

    #[test]
    fn contains_call_literal() {
        let text = serialize_graph(&hello_graph());
        assert!(text.contains("pasta:kind \"call\""));
        assert!(text.starts_with("@prefix pasta: <urn:pasta:vocab#> .\n\n<urn:pasta:train:"));
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            serialize_graph(&hello_graph()),
            serialize_graph(&hello_graph())
        );
    }

    #[test]
    fn escapes_survive() {
        let mut g = CodeGraph::new();
        g.insert(Triple::new(
            "urn:x",
            "urn:pasta:vocab#tokenText",
            Object::Str("a\"b\\c\nd\u{1}é".into()),
        ));
        g.insert(Triple::new("urn:x", "urn:other#p", Object::Int(-4)));
        let text = serialize_graph(&g);
        assert_eq!(parse_turtle(&text).unwrap(), g);
    }

    #[test]
    fn reader_errors_carry_line() {
        let err = parse_turtle("@prefix pasta: <urn:pasta:vocab#> .\n<urn:x> pasta:kind \"open\n")
            .unwrap_err();
        assert!(matches!(err, CodeGraphError::InvalidTurtle { line: 2, .. }));
        assert!(parse_turtle("<urn:x> nope:kind 1 .").is_err());
    }
}
