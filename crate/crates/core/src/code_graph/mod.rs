//! Syntax trees for train sources and their triple-graph representation.

mod graph;
mod python;
mod turtle;

use serde::Serialize;
use thiserror::Error;

use crate::model::{Position, Span, TrainBundle};

pub use graph::{graph_from_trees, node_iri, query_nodes, CodeGraph, Object, Triple, VOCAB};
pub use turtle::{parse_turtle, serialize_graph};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodeGraphError {
    #[error("unsupported language `{0}`")]
    UnsupportedLanguage(String),
    #[error("`{0}` is not valid UTF-8")]
    InvalidEncoding(String),
    #[error("turtle line {line}: {message}")]
    InvalidTurtle { line: usize, message: String },
}

/// A node of the concrete syntax tree. Leaves carry their token text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SyntaxNode {
    pub kind: String,
    pub span: Span,
    pub start_byte: usize,
    pub end_byte: usize,
    pub children: Vec<SyntaxNode>,
    pub text: Option<String>,
    /// False for anonymous punctuation and keyword leaves.
    pub named: bool,
}

impl SyntaxNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty() && self.text.is_some()
    }

    pub fn is_error(&self) -> bool {
        self.kind == "ERROR"
    }

    /// Depth-first, parent before children.
    pub fn preorder(&self) -> Preorder<'_> {
        Preorder { stack: vec![self] }
    }

    pub fn node_count(&self) -> usize {
        self.preorder().count()
    }

    pub fn has_error(&self) -> bool {
        self.preorder().any(SyntaxNode::is_error)
    }

    /// Concatenated text of all leaves below this node, comments excluded.
    pub fn leaf_text(&self) -> String {
        let mut out = String::new();
        for n in self.preorder() {
            if n.kind != "comment" {
                if let Some(t) = &n.text {
                    out.push_str(t);
                }
            }
        }
        out
    }

    /// Leaf text with single spaces where the source had whitespace, for
    /// display in findings.
    pub fn display_text(&self) -> String {
        let mut out = String::new();
        let mut prev_end = None;
        for n in self.preorder().filter(|n| n.kind != "comment") {
            if let Some(t) = &n.text {
                if prev_end.is_some_and(|e| e < n.start_byte) {
                    out.push(' ');
                }
                out.push_str(t);
                prev_end = Some(n.end_byte);
            }
        }
        out
    }

    pub fn named_children(&self) -> impl Iterator<Item = &SyntaxNode> {
        self.children.iter().filter(|c| c.named)
    }

    pub fn child_of_kind(&self, kind: &str) -> Option<&SyntaxNode> {
        self.named_children().find(|c| c.kind == kind)
    }
}

pub struct Preorder<'a> {
    stack: Vec<&'a SyntaxNode>,
}

impl<'a> Iterator for Preorder<'a> {
    type Item = &'a SyntaxNode;

    fn next(&mut self) -> Option<Self::Item> {
        let node = self.stack.pop()?;
        self.stack.extend(node.children.iter().rev());
        Some(node)
    }
}

struct LineIndex<'s> {
    src: &'s str,
    starts: Vec<usize>,
}

impl<'s> LineIndex<'s> {
    fn new(src: &'s str) -> Self {
        let mut starts = vec![0];
        let b = src.as_bytes();
        for (i, &c) in b.iter().enumerate() {
            if c == b'\n' || (c == b'\r' && b.get(i + 1) != Some(&b'\n')) {
                starts.push(i + 1);
            }
        }
        Self { src, starts }
    }

    fn position(&self, byte: usize) -> Position {
        let line = self.starts.partition_point(|&s| s <= byte) - 1;
        let col = self.src[self.starts[line]..byte].chars().count();
        Position::new(line as u32 + 1, col as u32 + 1)
    }
}

fn convert(raw: python::Raw, src: &str, index: &LineIndex<'_>) -> SyntaxNode {
    let span = Span::new(index.position(raw.start), index.position(raw.end));
    SyntaxNode {
        text: raw.leaf.then(|| src[raw.start..raw.end].to_string()),
        children: raw
            .children
            .into_iter()
            .map(|c| convert(c, src, index))
            .collect(),
        kind: raw.kind,
        named: raw.named,
        span,
        start_byte: raw.start,
        end_byte: raw.end,
    }
}

pub const SUPPORTED_LANGUAGES: [&str; 1] = ["python"];

/// Named node kinds the Python parser can emit.
pub const PYTHON_NODE_KINDS: &[&str] = &[
    "ERROR",
    "aliased_import",
    "argument_list",
    "as_pattern",
    "as_pattern_target",
    "assert_statement",
    "assignment",
    "attribute",
    "augmented_assignment",
    "await",
    "binary_operator",
    "block",
    "boolean_operator",
    "break_statement",
    "call",
    "class_definition",
    "comment",
    "comparison_operator",
    "concatenated_string",
    "conditional_expression",
    "continue_statement",
    "decorated_definition",
    "decorator",
    "default_parameter",
    "delete_statement",
    "dictionary",
    "dictionary_comprehension",
    "dictionary_splat",
    "dictionary_splat_pattern",
    "dotted_name",
    "elif_clause",
    "ellipsis",
    "else_clause",
    "escape_sequence",
    "except_clause",
    "except_group_clause",
    "expression_list",
    "expression_statement",
    "false",
    "finally_clause",
    "float",
    "for_in_clause",
    "for_statement",
    "format_specifier",
    "function_definition",
    "future_import_statement",
    "generator_expression",
    "global_statement",
    "identifier",
    "if_clause",
    "if_statement",
    "import_from_statement",
    "import_prefix",
    "import_statement",
    "integer",
    "interpolation",
    "keyword_argument",
    "keyword_separator",
    "lambda",
    "lambda_parameters",
    "list",
    "list_comprehension",
    "list_pattern",
    "list_splat",
    "list_splat_pattern",
    "module",
    "named_expression",
    "none",
    "nonlocal_statement",
    "not_operator",
    "pair",
    "parameters",
    "parenthesized_expression",
    "pass_statement",
    "pattern_list",
    "positional_separator",
    "raise_statement",
    "relative_import",
    "return_statement",
    "set",
    "set_comprehension",
    "slice",
    "string",
    "string_content",
    "string_end",
    "string_start",
    "subscript",
    "true",
    "try_statement",
    "tuple",
    "tuple_pattern",
    "type",
    "type_conversion",
    "typed_default_parameter",
    "typed_parameter",
    "unary_operator",
    "while_statement",
    "wildcard_import",
    "with_clause",
    "with_item",
    "with_statement",
    "yield",
];

/// Language for a bundle path, judged by extension.
pub fn language_for_path(path: &str) -> Option<&'static str> {
    let lower = path.to_ascii_lowercase();
    (lower.ends_with(".py") || lower.ends_with(".pyw")).then_some("python")
}

/// Parse one file into its full concrete syntax tree. Malformed code yields
/// `ERROR` nodes rather than a failure.
pub fn parse_source(
    path: &str,
    bytes: &[u8],
    language: &str,
) -> Result<SyntaxNode, CodeGraphError> {
    if !language.eq_ignore_ascii_case("python") {
        return Err(CodeGraphError::UnsupportedLanguage(language.to_string()));
    }
    let src = std::str::from_utf8(bytes)
        .map_err(|_| CodeGraphError::InvalidEncoding(path.to_string()))?;
    let src = src.strip_prefix('\u{feff}').unwrap_or(src);
    let index = LineIndex::new(src);
    Ok(convert(python::parse(src), src, &index))
}

/// Syntax trees keyed by bundle path.
pub type ParsedFiles = Vec<(String, SyntaxNode)>;
pub type FailedFiles = Vec<(String, CodeGraphError)>;

/// Parse every source file of a bundle that has a supported language.
/// Files that cannot be parsed are returned separately with their error.
pub fn parse_bundle(bundle: &TrainBundle) -> (ParsedFiles, FailedFiles) {
    let mut trees = Vec::new();
    let mut failed = Vec::new();
    for file in bundle.source_files() {
        let Some(lang) = language_for_path(&file.path) else {
            continue;
        };
        match parse_source(&file.path, &file.contents, lang) {
            Ok(tree) => trees.push((file.path.clone(), tree)),
            Err(e) => failed.push((file.path.clone(), e)),
        }
    }
    (trees, failed)
}
