use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::model::TrainMetadata;

use super::SyntaxNode;

/// Base IRI of the graph vocabulary.
pub const VOCAB: &str = "urn:pasta:vocab#";

fn vocab(local: &str) -> String {
    format!("{VOCAB}{local}")
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Object {
    Iri(String),
    Str(String),
    Int(i64),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: Object,
}

impl Triple {
    pub fn new(subject: impl Into<String>, predicate: impl Into<String>, object: Object) -> Self {
        Self {
            subject: subject.into(),
            predicate: predicate.into(),
            object,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CodeGraph {
    pub triples: BTreeSet<Triple>,
    pub prefixes: BTreeMap<String, String>,
}

impl CodeGraph {
    /// An empty graph with the vocabulary prefix bound to `pasta`.
    pub fn new() -> Self {
        let mut prefixes = BTreeMap::new();
        prefixes.insert("pasta".to_string(), VOCAB.to_string());
        Self {
            triples: BTreeSet::new(),
            prefixes,
        }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn insert(&mut self, triple: Triple) -> bool {
        self.triples.insert(triple)
    }

    pub fn objects(&self, subject: &str, predicate: &str) -> Vec<&Object> {
        self.triples
            .iter()
            .filter(|t| t.subject == subject && t.predicate == predicate)
            .map(|t| &t.object)
            .collect()
    }

    /// Number of `kind` triples, i.e. syntax nodes in the graph.
    pub fn kind_count(&self) -> usize {
        let kind = vocab("kind");
        self.triples.iter().filter(|t| t.predicate == kind).count()
    }
}

fn escape_path(path: &str) -> String {
    let mut out = String::with_capacity(path.len());
    for b in path.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'/' | b'-' | b'.' | b'_' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

pub(crate) fn train_iri(train_id: &str) -> String {
    format!("urn:pasta:train:{}", escape_path(train_id))
}

fn file_iri(train_id: &str, path: &str) -> String {
    format!("{}/{}", train_iri(train_id), escape_path(path))
}

/// Node id for the `preorder`-th node of the tree at `path`.
pub fn node_iri(train_id: &str, path: &str, preorder: usize) -> String {
    format!("{}#n{preorder}", file_iri(train_id, path))
}

/// Emit triples for `node` (preorder index `idx`); returns its subtree size.
fn add_tree(
    graph: &mut CodeGraph,
    train_id: &str,
    path: &str,
    node: &SyntaxNode,
    idx: usize,
) -> usize {
    let int = |v: u32| Object::Int(i64::from(v));
    let id = node_iri(train_id, path, idx);
    graph.insert(Triple::new(
        &id,
        vocab("kind"),
        Object::Str(node.kind.clone()),
    ));
    graph.insert(Triple::new(
        &id,
        vocab("startLine"),
        int(node.span.start.line),
    ));
    graph.insert(Triple::new(
        &id,
        vocab("startCol"),
        int(node.span.start.col),
    ));
    graph.insert(Triple::new(&id, vocab("endLine"), int(node.span.end.line)));
    graph.insert(Triple::new(&id, vocab("endCol"), int(node.span.end.col)));
    if let Some(text) = &node.text {
        graph.insert(Triple::new(
            &id,
            vocab("tokenText"),
            Object::Str(text.clone()),
        ));
    }
    let mut next = idx + 1;
    for (i, child) in node.children.iter().enumerate() {
        let child_id = node_iri(train_id, path, next);
        graph.insert(Triple::new(
            &id,
            vocab("hasChild"),
            Object::Iri(child_id.clone()),
        ));
        graph.insert(Triple::new(
            &child_id,
            vocab("childIndex"),
            Object::Int(i as i64),
        ));
        next += add_tree(graph, train_id, path, child, next);
    }
    next - idx
}

/// Merge per-file trees and train metadata into one graph. Node ids are
/// derived from (path, preorder index) so identical inputs give identical
/// graphs.
pub fn graph_from_trees(trees: &[(String, SyntaxNode)], metadata: &TrainMetadata) -> CodeGraph {
    let mut graph = CodeGraph::new();
    let train_id = metadata.train_id();
    let train = train_iri(&train_id);
    graph.insert(Triple::new(
        &train,
        vocab("hasName"),
        Object::Str(metadata.name.clone()),
    ));
    graph.insert(Triple::new(
        &train,
        vocab("hasVersion"),
        Object::Str(metadata.version.clone()),
    ));
    graph.insert(Triple::new(
        &train,
        vocab("hasCreator"),
        Object::Str(metadata.creator.clone()),
    ));
    for (path, root) in trees {
        let file = file_iri(&train_id, path);
        graph.insert(Triple::new(
            &train,
            vocab("hasFile"),
            Object::Iri(file.clone()),
        ));
        graph.insert(Triple::new(
            &file,
            vocab("rootNode"),
            Object::Iri(node_iri(&train_id, path, 0)),
        ));
        add_tree(&mut graph, &train_id, path, root, 0);
    }
    graph
}

fn split_node_id(id: &str) -> Option<(&str, usize)> {
    let (file, n) = id.rsplit_once("#n")?;
    Some((file, n.parse().ok()?))
}

/// Ids of all nodes of `kind`, ordered by (file, preorder index).
pub fn query_nodes(graph: &CodeGraph, kind: &str) -> Vec<String> {
    let pred = vocab("kind");
    let mut hits: Vec<(&str, usize, &String)> = graph
        .triples
        .iter()
        .filter(|t| t.predicate == pred && t.object == Object::Str(kind.to_string()))
        .map(|t| {
            let (file, n) = split_node_id(&t.subject).unwrap_or((t.subject.as_str(), 0));
            (file, n, &t.subject)
        })
        .collect();
    hits.sort();
    hits.into_iter().map(|(_, _, id)| id.clone()).collect()
}
