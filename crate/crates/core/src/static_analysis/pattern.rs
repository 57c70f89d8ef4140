//! Tree patterns over syntax nodes.
//!
//! A pattern constrains a node's kind, the concatenated text of its leaves,
//! its named children and its descendants. Patterns nest, so a rule file can
//! describe shapes like "a call whose first argument is not a plain string".

use regex::Regex;
use serde::Deserialize;

use crate::code_graph::{SyntaxNode, PYTHON_NODE_KINDS};

use super::RulesetError;

/// Serialized form, as written in a ruleset file.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NodePatternSpec {
    pub kind: Option<String>,
    /// Regex searched in the node's leaf text.
    pub text: Option<String>,
    /// Position among the parent's named children; negative counts from the
    /// end. Only meaningful inside `child`.
    pub index: Option<i64>,
    #[serde(default)]
    pub child: Vec<NodePatternSpec>,
    #[serde(default)]
    pub descendant: Vec<NodePatternSpec>,
    #[serde(default)]
    pub no_descendant: Vec<NodePatternSpec>,
    #[serde(default)]
    pub not: Vec<NodePatternSpec>,
    #[serde(default)]
    pub any_of: Vec<NodePatternSpec>,
}

#[derive(Debug, Clone)]
pub struct NodePattern {
    kind: Option<String>,
    text: Option<Regex>,
    index: Option<i64>,
    child: Vec<NodePattern>,
    descendant: Vec<NodePattern>,
    no_descendant: Vec<NodePattern>,
    not: Vec<NodePattern>,
    any_of: Vec<NodePattern>,
}

impl NodePattern {
    pub fn compile(spec: &NodePatternSpec, rule: &str) -> Result<Self, RulesetError> {
        if let Some(kind) = &spec.kind {
            if !PYTHON_NODE_KINDS.contains(&kind.as_str()) {
                return Err(RulesetError::UnknownNodeKind {
                    rule: rule.to_string(),
                    kind: kind.clone(),
                });
            }
        }
        let text = spec
            .text
            .as_deref()
            .map(Regex::new)
            .transpose()
            .map_err(|e| RulesetError::BadRegex {
                rule: rule.to_string(),
                message: e.to_string(),
            })?;
        let all = |list: &[NodePatternSpec]| -> Result<Vec<NodePattern>, RulesetError> {
            list.iter().map(|p| NodePattern::compile(p, rule)).collect()
        };
        Ok(Self {
            kind: spec.kind.clone(),
            text,
            index: spec.index,
            child: all(&spec.child)?,
            descendant: all(&spec.descendant)?,
            no_descendant: all(&spec.no_descendant)?,
            not: all(&spec.not)?,
            any_of: all(&spec.any_of)?,
        })
    }

    pub fn matches(&self, node: &SyntaxNode) -> bool {
        if self.kind.as_ref().is_some_and(|k| *k != node.kind) {
            return false;
        }
        if let Some(re) = &self.text {
            if !re.is_match(&node.leaf_text()) {
                return false;
            }
        }
        if !self.child.iter().all(|c| c.matches_child_of(node)) {
            return false;
        }
        let below = || node.preorder().skip(1);
        if !self
            .descendant
            .iter()
            .all(|d| below().any(|n| d.matches(n)))
        {
            return false;
        }
        if self
            .no_descendant
            .iter()
            .any(|d| below().any(|n| d.matches(n)))
        {
            return false;
        }
        if self.not.iter().any(|p| p.matches(node)) {
            return false;
        }
        self.any_of.is_empty() || self.any_of.iter().any(|p| p.matches(node))
    }

    fn matches_child_of(&self, parent: &SyntaxNode) -> bool {
        let named: Vec<&SyntaxNode> = parent
            .named_children()
            .filter(|c| c.kind != "comment")
            .collect();
        match self.index {
            Some(i) => {
                let idx = if i < 0 { named.len() as i64 + i } else { i };
                usize::try_from(idx)
                    .ok()
                    .and_then(|i| named.get(i))
                    .is_some_and(|c| self.matches(c))
            }
            None => named.iter().any(|c| self.matches(c)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code_graph::parse_source;

    fn pattern(toml_src: &str) -> NodePattern {
        let spec: NodePatternSpec = toml::from_str(toml_src).unwrap();
        NodePattern::compile(&spec, "t").unwrap()
    }

    fn count(p: &NodePattern, src: &str) -> usize {
        let tree = parse_source("t.py", src.as_bytes(), "python").unwrap();
        tree.preorder().filter(|n| p.matches(n)).count()
    }

    #[test]
    fn kind_and_text() {
        let p = pattern("kind = 'call'\n[[child]]\nindex = 0\ntext = '^eval$'\n");
        assert_eq!(count(&p, "eval(x)\nevaluate(x)\nprint(eval)"), 1);
    }

    #[test]
    fn negative_index_and_not() {
        let p =
            pattern("kind = 'assignment'\n[[child]]\nindex = -1\nnot = [{ kind = 'integer' }]\n");
        assert_eq!(count(&p, "a = 1\nb = 'x'\nc: int = 2\n"), 1);
    }

    #[test]
    fn descendants() {
        let p = pattern("kind = 'string'\n[[descendant]]\nkind = 'interpolation'\n");
        assert_eq!(count(&p, "f'{a}'\n'plain'\n"), 1);
        let p = pattern("kind = 'string'\n[[no_descendant]]\nkind = 'interpolation'\n");
        assert_eq!(count(&p, "f'{a}'\n'plain'\n"), 1);
    }

    #[test]
    fn any_of() {
        let p = pattern("any_of = [{ kind = 'integer' }, { kind = 'float' }]\n");
        assert_eq!(count(&p, "x = 1 + 2.5\n"), 2);
    }

    #[test]
    fn unknown_kind_rejected() {
        let spec: NodePatternSpec = toml::from_str("kind = 'function_call'").unwrap();
        assert!(matches!(
            NodePattern::compile(&spec, "r"),
            Err(RulesetError::UnknownNodeKind { .. })
        ));
        let spec: NodePatternSpec = toml::from_str("text = '('").unwrap();
        assert!(matches!(
            NodePattern::compile(&spec, "r"),
            Err(RulesetError::BadRegex { .. })
        ));
    }
}
