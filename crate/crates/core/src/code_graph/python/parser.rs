//! Recursive-descent parser producing a concrete syntax tree whose node kinds
//! follow the tree-sitter-python grammar.
//!
//! Statements that fail to parse are kept as `ERROR` nodes holding the raw
//! tokens of the offending logical line, and parsing continues.

use super::lexer::{tokenize, TokKind, Token};

/// Byte-addressed tree, converted to line/column spans by the caller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Raw {
    pub kind: String,
    pub start: usize,
    pub end: usize,
    pub children: Vec<Raw>,
    pub leaf: bool,
    /// False for punctuation and keyword tokens.
    pub named: bool,
}

impl Raw {
    fn leaf(kind: impl Into<String>, start: usize, end: usize) -> Self {
        Raw {
            kind: kind.into(),
            start,
            end,
            children: Vec::new(),
            leaf: true,
            named: true,
        }
    }

    fn anon(kind: impl Into<String>, start: usize, end: usize) -> Self {
        Raw {
            named: false,
            ..Raw::leaf(kind, start, end)
        }
    }

    fn node(kind: impl Into<String>, children: Vec<Raw>) -> Self {
        let start = children.first().map_or(0, |c| c.start);
        let end = children.last().map_or(0, |c| c.end);
        Raw {
            kind: kind.into(),
            start,
            end,
            children,
            leaf: false,
            named: true,
        }
    }
}

type PResult<T = Raw> = Result<T, ()>;

const KEYWORDS: [&str; 35] = [
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue",
    "def", "del", "elif", "else", "except", "finally", "for", "from", "global", "if", "import",
    "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return", "try", "while",
    "with", "yield",
];

const AUG_ASSIGN: [&str; 13] = [
    "+=", "-=", "*=", "/=", "//=", "%=", "@=", "&=", "|=", "^=", ">>=", "<<=", "**=",
];

const BINARY_LEVELS: [&[&str]; 6] = [
    &["|"],
    &["^"],
    &["&"],
    &["<<", ">>"],
    &["+", "-"],
    &["*", "/", "//", "%", "@"],
];

const MAX_DEPTH: usize = 100;

struct Parser<'s> {
    src: &'s str,
    toks: Vec<Token>,
    i: usize,
    depth: usize,
}

impl<'s> Parser<'s> {
    fn new(src: &'s str, toks: Vec<Token>) -> Self {
        Parser {
            src,
            toks,
            i: 0,
            depth: 0,
        }
    }

    fn tok(&self) -> Token {
        self.toks[self.i]
    }

    fn peek(&self, n: usize) -> Token {
        self.toks[(self.i + n).min(self.toks.len() - 1)]
    }

    fn text_of(&self, t: Token) -> &'s str {
        &self.src[t.start..t.end]
    }

    fn is_op_at(&self, n: usize, s: &str) -> bool {
        let t = self.peek(n);
        t.kind == TokKind::Op && self.text_of(t) == s
    }

    fn is_op(&self, s: &str) -> bool {
        self.is_op_at(0, s)
    }

    fn is_kw_at(&self, n: usize, s: &str) -> bool {
        let t = self.peek(n);
        t.kind == TokKind::Name && self.text_of(t) == s
    }

    fn is_kw(&self, s: &str) -> bool {
        self.is_kw_at(0, s)
    }

    fn at(&self, kind: TokKind) -> bool {
        self.tok().kind == kind
    }

    fn at_line_end(&self) -> bool {
        matches!(self.tok().kind, TokKind::Newline | TokKind::End) || self.is_op(";")
    }

    fn advance(&mut self) -> Token {
        let t = self.tok();
        if t.kind != TokKind::End {
            self.i += 1;
        }
        t
    }

    /// Consume the current token as an anonymous leaf named after its text.
    fn punct(&mut self) -> Raw {
        let t = self.advance();
        Raw::anon(self.text_of(t), t.start, t.end)
    }

    fn expect_op(&mut self, s: &str) -> PResult {
        if self.is_op(s) {
            Ok(self.punct())
        } else {
            Err(())
        }
    }

    fn expect_kw(&mut self, s: &str) -> PResult {
        if self.is_kw(s) {
            Ok(self.punct())
        } else {
            Err(())
        }
    }

    fn is_identifier(&self) -> bool {
        let t = self.tok();
        t.kind == TokKind::Name && !KEYWORDS.contains(&self.text_of(t))
    }

    fn identifier(&mut self) -> PResult {
        if self.is_identifier() {
            let t = self.advance();
            Ok(Raw::leaf("identifier", t.start, t.end))
        } else {
            Err(())
        }
    }

    fn enter(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            Err(())
        } else {
            Ok(())
        }
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    fn starts_expression(&self) -> bool {
        let t = self.tok();
        match t.kind {
            TokKind::Name => {
                let w = self.text_of(t);
                !KEYWORDS.contains(&w)
                    || matches!(
                        w,
                        "True" | "False" | "None" | "not" | "lambda" | "await" | "yield"
                    )
            }
            TokKind::Number | TokKind::Str => true,
            TokKind::Op => matches!(
                self.text_of(t),
                "(" | "[" | "{" | "-" | "+" | "~" | "*" | "**" | "..."
            ),
            _ => false,
        }
    }

    // ---- leaves for arbitrary tokens (used by error recovery) ----

    fn token_leaf(&self, t: Token) -> Raw {
        let text = self.text_of(t);
        match t.kind {
            TokKind::Name if KEYWORDS.contains(&text) => Raw::anon(text, t.start, t.end),
            TokKind::Name => Raw::leaf("identifier", t.start, t.end),
            TokKind::Number => Raw::leaf(number_kind(text), t.start, t.end),
            TokKind::Str => self.string_node(t),
            TokKind::Op => Raw::anon(text, t.start, t.end),
            _ => Raw::leaf("ERROR", t.start, t.end),
        }
    }

    // ---- statements ----

    fn module(&mut self) -> Raw {
        let mut children = Vec::new();
        while !self.at(TokKind::End) {
            self.statement(&mut children);
        }
        Raw {
            kind: "module".into(),
            start: 0,
            end: self.src.len(),
            children,
            leaf: false,
            named: true,
        }
    }

    /// Parse one statement (or one line of simple statements) into `out`.
    fn statement(&mut self, out: &mut Vec<Raw>) {
        let t = self.tok();
        match t.kind {
            TokKind::Newline => {
                self.advance();
                return;
            }
            TokKind::Dedent => {
                // only reachable at module level after a malformed block
                self.advance();
                return;
            }
            TokKind::Indent => {
                self.advance();
                let mut inner = Vec::new();
                while !self.at(TokKind::Dedent) && !self.at(TokKind::End) {
                    self.statement(&mut inner);
                }
                if self.at(TokKind::Dedent) {
                    self.advance();
                }
                if !inner.is_empty() {
                    out.push(Raw::node("ERROR", inner));
                }
                return;
            }
            TokKind::Error if t.start == t.end => {
                self.advance();
                out.push(Raw::leaf("ERROR", t.start, t.end));
                return;
            }
            _ => {}
        }
        let start = self.i;
        let depth = self.depth;
        let result = if self.at_compound() {
            self.compound_statement().map(|s| vec![s])
        } else {
            self.simple_line()
        };
        match result {
            Ok(mut stmts) => out.append(&mut stmts),
            Err(()) => {
                self.i = start;
                self.depth = depth;
                out.push(self.recover_line());
            }
        }
    }

    fn recover_line(&mut self) -> Raw {
        let mut leaves = Vec::new();
        loop {
            let t = self.tok();
            match t.kind {
                TokKind::End | TokKind::Indent | TokKind::Dedent => break,
                TokKind::Newline => {
                    self.advance();
                    break;
                }
                _ => {
                    self.advance();
                    leaves.push(self.token_leaf(t));
                }
            }
        }
        if leaves.is_empty() {
            let t = self.tok();
            Raw::leaf("ERROR", t.start, t.start)
        } else {
            Raw::node("ERROR", leaves)
        }
    }

    fn at_compound(&self) -> bool {
        if self.is_op("@") {
            return true;
        }
        if self.is_kw("async") {
            return self.is_kw_at(1, "def") || self.is_kw_at(1, "for") || self.is_kw_at(1, "with");
        }
        ["if", "for", "while", "try", "with", "def", "class"]
            .iter()
            .any(|k| self.is_kw(k))
    }

    fn simple_line(&mut self) -> PResult<Vec<Raw>> {
        let mut out = vec![self.simple_statement()?];
        while self.is_op(";") {
            out.push(self.punct());
            if matches!(self.tok().kind, TokKind::Newline | TokKind::End) {
                break;
            }
            out.push(self.simple_statement()?);
        }
        match self.tok().kind {
            TokKind::Newline => {
                self.advance();
                Ok(out)
            }
            TokKind::End => Ok(out),
            _ => Err(()),
        }
    }

    fn keyword_statement(&mut self, kind: &str) -> Raw {
        let kw = self.punct();
        Raw::node(kind, vec![kw])
    }

    fn simple_statement(&mut self) -> PResult {
        let t = self.tok();
        if t.kind != TokKind::Name {
            return self.expression_statement();
        }
        match self.text_of(t) {
            "pass" => Ok(self.keyword_statement("pass_statement")),
            "break" => Ok(self.keyword_statement("break_statement")),
            "continue" => Ok(self.keyword_statement("continue_statement")),
            "return" => {
                let mut ch = vec![self.punct()];
                if !self.at_line_end() {
                    ch.push(self.expression_list("expression_list")?);
                }
                Ok(Raw::node("return_statement", ch))
            }
            "raise" => {
                let mut ch = vec![self.punct()];
                if !self.at_line_end() {
                    ch.push(self.expression()?);
                    if self.is_kw("from") {
                        ch.push(self.punct());
                        ch.push(self.expression()?);
                    }
                }
                Ok(Raw::node("raise_statement", ch))
            }
            "assert" => {
                let mut ch = vec![self.punct(), self.expression()?];
                if self.is_op(",") {
                    ch.push(self.punct());
                    ch.push(self.expression()?);
                }
                Ok(Raw::node("assert_statement", ch))
            }
            "global" | "nonlocal" => {
                let kind = format!("{}_statement", self.text_of(t));
                let mut ch = vec![self.punct(), self.identifier()?];
                while self.is_op(",") {
                    ch.push(self.punct());
                    ch.push(self.identifier()?);
                }
                Ok(Raw::node(kind, ch))
            }
            "del" => {
                let ch = vec![self.punct(), self.expression_list("expression_list")?];
                Ok(Raw::node("delete_statement", ch))
            }
            "import" => self.import_statement(),
            "from" => self.import_from_statement(),
            _ => self.expression_statement(),
        }
    }

    fn dotted_name(&mut self) -> PResult {
        let mut ch = vec![self.identifier()?];
        while self.is_op(".") {
            ch.push(self.punct());
            ch.push(self.identifier()?);
        }
        Ok(Raw::node("dotted_name", ch))
    }

    fn maybe_aliased(&mut self) -> PResult {
        let name = self.dotted_name()?;
        if self.is_kw("as") {
            let as_kw = self.punct();
            let alias = self.identifier()?;
            Ok(Raw::node("aliased_import", vec![name, as_kw, alias]))
        } else {
            Ok(name)
        }
    }

    fn import_statement(&mut self) -> PResult {
        let mut ch = vec![self.punct(), self.maybe_aliased()?];
        while self.is_op(",") {
            ch.push(self.punct());
            ch.push(self.maybe_aliased()?);
        }
        Ok(Raw::node("import_statement", ch))
    }

    fn import_from_statement(&mut self) -> PResult {
        let mut ch = vec![self.punct()];
        let mut future = false;
        if self.is_op(".") || self.is_op("...") {
            let mut prefix = Vec::new();
            while self.is_op(".") || self.is_op("...") {
                prefix.push(self.punct());
            }
            let mut rel = vec![Raw::node("import_prefix", prefix)];
            if self.is_identifier() {
                rel.push(self.dotted_name()?);
            }
            ch.push(Raw::node("relative_import", rel));
        } else {
            let name = self.dotted_name()?;
            future = &self.src[name.start..name.end] == "__future__";
            ch.push(name);
        }
        ch.push(self.expect_kw("import")?);
        if self.is_op("*") {
            let star = self.punct();
            ch.push(Raw::node("wildcard_import", vec![star]));
        } else {
            let paren = self.is_op("(");
            if paren {
                ch.push(self.punct());
            }
            ch.push(self.maybe_aliased()?);
            while self.is_op(",") {
                ch.push(self.punct());
                if paren && self.is_op(")") {
                    break;
                }
                ch.push(self.maybe_aliased()?);
            }
            if paren {
                ch.push(self.expect_op(")")?);
            }
        }
        let kind = if future {
            "future_import_statement"
        } else {
            "import_from_statement"
        };
        Ok(Raw::node(kind, ch))
    }

    /// Comma-separated expressions (with optional `*x` items). A single item
    /// without a trailing comma is returned bare; otherwise wrapped in `kind`.
    fn expression_list(&mut self, kind: &str) -> PResult {
        let (items, single) = self.star_items(Self::expression)?;
        Ok(if single {
            items.into_iter().next().expect("single item")
        } else {
            Raw::node(kind, items)
        })
    }

    fn star_items(&mut self, item: fn(&mut Self) -> PResult) -> PResult<(Vec<Raw>, bool)> {
        let mut items = Vec::new();
        let mut commas = 0;
        loop {
            if self.is_op("*") {
                let star = self.punct();
                let value = self.bitwise(0)?;
                items.push(Raw::node("list_splat", vec![star, value]));
            } else {
                items.push(item(self)?);
            }
            if !self.is_op(",") {
                break;
            }
            items.push(self.punct());
            commas += 1;
            if !self.starts_expression() {
                break;
            }
        }
        Ok((items, commas == 0))
    }

    fn yield_expression(&mut self) -> PResult {
        let mut ch = vec![self.punct()];
        if self.is_kw("from") {
            ch.push(self.punct());
            ch.push(self.expression()?);
        } else if self.starts_expression() {
            ch.push(self.expression_list("expression_list")?);
        }
        Ok(Raw::node("yield", ch))
    }

    fn assignment_rhs(&mut self) -> PResult {
        if self.is_kw("yield") {
            return self.yield_expression();
        }
        let value = self.expression_list("expression_list")?;
        if self.is_op("=") {
            let eq = self.punct();
            let rhs = self.assignment_rhs()?;
            let left = to_pattern(value);
            return Ok(Raw::node("assignment", vec![left, eq, rhs]));
        }
        Ok(value)
    }

    fn expression_statement(&mut self) -> PResult {
        if self.is_kw("yield") {
            let y = self.yield_expression()?;
            return Ok(Raw::node("expression_statement", vec![y]));
        }
        let (items, single) = self.star_items(Self::named_expression)?;
        let inner = if self.is_op("=") || self.is_op(":") {
            let left = if single {
                to_pattern(items.into_iter().next().expect("single item"))
            } else {
                Raw::node("pattern_list", items.into_iter().map(to_pattern).collect())
            };
            let mut ch = vec![left];
            if self.is_op(":") {
                ch.push(self.punct());
                ch.push(Raw::node("type", vec![self.expression()?]));
                if self.is_op("=") {
                    ch.push(self.punct());
                    ch.push(self.assignment_rhs()?);
                }
            } else {
                ch.push(self.punct());
                ch.push(self.assignment_rhs()?);
            }
            vec![Raw::node("assignment", ch)]
        } else if AUG_ASSIGN.iter().any(|op| self.is_op(op)) {
            if !single {
                return Err(());
            }
            let left = items.into_iter().next().expect("single item");
            let op = self.punct();
            let rhs = if self.is_kw("yield") {
                self.yield_expression()?
            } else {
                self.expression_list("expression_list")?
            };
            vec![Raw::node("augmented_assignment", vec![left, op, rhs])]
        } else {
            items
        };
        Ok(Raw::node("expression_statement", inner))
    }

    // ---- compound statements ----

    fn compound_statement(&mut self) -> PResult {
        if self.is_op("@") {
            return self.decorated_definition();
        }
        let async_kw = if self.is_kw("async") {
            Some(self.punct())
        } else {
            None
        };
        let kw = self.text_of(self.tok());
        let mut node = match kw {
            "if" => self.if_statement(),
            "for" => self.for_statement(),
            "while" => self.while_statement(),
            "try" => self.try_statement(),
            "with" => self.with_statement(),
            "def" => self.function_definition(),
            "class" => self.class_definition(),
            _ => Err(()),
        }?;
        if let Some(a) = async_kw {
            node.start = a.start;
            node.children.insert(0, a);
        }
        Ok(node)
    }

    fn block(&mut self) -> PResult {
        if !self.at(TokKind::Newline) {
            let stmts = self.simple_line()?;
            return Ok(Raw::node("block", stmts));
        }
        self.advance();
        if !self.at(TokKind::Indent) {
            return Err(());
        }
        self.advance();
        let mut stmts = Vec::new();
        while !self.at(TokKind::Dedent) && !self.at(TokKind::End) {
            self.statement(&mut stmts);
        }
        if self.at(TokKind::Dedent) {
            self.advance();
        }
        if stmts.is_empty() {
            return Err(());
        }
        Ok(Raw::node("block", stmts))
    }

    fn colon_block(&mut self, ch: &mut Vec<Raw>) -> PResult<()> {
        ch.push(self.expect_op(":")?);
        ch.push(self.block()?);
        Ok(())
    }

    fn else_clause(&mut self) -> PResult {
        let mut ch = vec![self.punct()];
        self.colon_block(&mut ch)?;
        Ok(Raw::node("else_clause", ch))
    }

    fn if_statement(&mut self) -> PResult {
        let mut ch = vec![self.punct(), self.named_expression()?];
        self.colon_block(&mut ch)?;
        while self.is_kw("elif") {
            let mut clause = vec![self.punct(), self.named_expression()?];
            self.colon_block(&mut clause)?;
            ch.push(Raw::node("elif_clause", clause));
        }
        if self.is_kw("else") {
            ch.push(self.else_clause()?);
        }
        Ok(Raw::node("if_statement", ch))
    }

    fn for_statement(&mut self) -> PResult {
        let mut ch = vec![self.punct(), self.targets()?, self.expect_kw("in")?];
        ch.push(self.expression_list("expression_list")?);
        self.colon_block(&mut ch)?;
        if self.is_kw("else") {
            ch.push(self.else_clause()?);
        }
        Ok(Raw::node("for_statement", ch))
    }

    fn while_statement(&mut self) -> PResult {
        let mut ch = vec![self.punct(), self.named_expression()?];
        self.colon_block(&mut ch)?;
        if self.is_kw("else") {
            ch.push(self.else_clause()?);
        }
        Ok(Raw::node("while_statement", ch))
    }

    fn try_statement(&mut self) -> PResult {
        let mut ch = vec![self.punct()];
        self.colon_block(&mut ch)?;
        let mut handlers = 0;
        while self.is_kw("except") {
            let mut clause = vec![self.punct()];
            let kind = if self.is_op("*") {
                clause.push(self.punct());
                "except_group_clause"
            } else {
                "except_clause"
            };
            if !self.is_op(":") {
                clause.push(self.expression()?);
                if self.is_kw("as") || self.is_op(",") {
                    clause.push(self.punct());
                    clause.push(self.identifier()?);
                }
            }
            self.colon_block(&mut clause)?;
            ch.push(Raw::node(kind, clause));
            handlers += 1;
        }
        if handlers > 0 && self.is_kw("else") {
            ch.push(self.else_clause()?);
        }
        if self.is_kw("finally") {
            let mut clause = vec![self.punct()];
            self.colon_block(&mut clause)?;
            ch.push(Raw::node("finally_clause", clause));
            handlers += 1;
        }
        if handlers == 0 {
            return Err(());
        }
        Ok(Raw::node("try_statement", ch))
    }

    fn with_item(&mut self) -> PResult {
        let value = self.expression()?;
        if self.is_kw("as") {
            let as_kw = self.punct();
            let target = self.target()?;
            let target = Raw::node("as_pattern_target", vec![target]);
            let pattern = Raw::node("as_pattern", vec![value, as_kw, target]);
            Ok(Raw::node("with_item", vec![pattern]))
        } else {
            Ok(Raw::node("with_item", vec![value]))
        }
    }

    fn with_items(&mut self, ch: &mut Vec<Raw>) -> PResult<()> {
        ch.push(self.with_item()?);
        while self.is_op(",") {
            ch.push(self.punct());
            if self.is_op(")") {
                break;
            }
            ch.push(self.with_item()?);
        }
        Ok(())
    }

    fn with_statement(&mut self) -> PResult {
        let mut ch = vec![self.punct()];
        let save = self.i;
        let mut clause = Vec::new();
        let parenthesized = self.is_op("(") && {
            clause.push(self.punct());
            self.with_items(&mut clause).is_ok() && self.is_op(")") && self.is_op_at(1, ":")
        };
        if parenthesized {
            clause.push(self.punct());
        } else {
            self.i = save;
            clause.clear();
            self.with_items(&mut clause)?;
        }
        ch.push(Raw::node("with_clause", clause));
        self.colon_block(&mut ch)?;
        Ok(Raw::node("with_statement", ch))
    }

    fn parameter(&mut self, lambda: bool) -> PResult {
        if self.is_op("/") {
            let t = self.advance();
            return Ok(Raw::leaf("positional_separator", t.start, t.end));
        }
        if self.is_op("*") || self.is_op("**") {
            let double = self.is_op("**");
            let star = self.punct();
            if !double && (self.is_op(",") || self.is_op(")") || self.is_op(":")) {
                return Ok(Raw::node("keyword_separator", vec![star]));
            }
            let kind = if double {
                "dictionary_splat_pattern"
            } else {
                "list_splat_pattern"
            };
            let splat = Raw::node(kind, vec![star, self.identifier()?]);
            if !lambda && self.is_op(":") {
                let colon = self.punct();
                let ty = Raw::node("type", vec![self.expression()?]);
                return Ok(Raw::node("typed_parameter", vec![splat, colon, ty]));
            }
            return Ok(splat);
        }
        let name = self.identifier()?;
        let mut ch = vec![name];
        let mut typed = false;
        if !lambda && self.is_op(":") {
            ch.push(self.punct());
            ch.push(Raw::node("type", vec![self.expression()?]));
            typed = true;
        }
        if self.is_op("=") {
            ch.push(self.punct());
            ch.push(self.expression()?);
            let kind = if typed {
                "typed_default_parameter"
            } else {
                "default_parameter"
            };
            return Ok(Raw::node(kind, ch));
        }
        if typed {
            return Ok(Raw::node("typed_parameter", ch));
        }
        Ok(ch.pop().expect("identifier"))
    }

    fn parameters(&mut self) -> PResult {
        let mut ch = vec![self.expect_op("(")?];
        while !self.is_op(")") {
            ch.push(self.parameter(false)?);
            if self.is_op(",") {
                ch.push(self.punct());
            } else {
                break;
            }
        }
        ch.push(self.expect_op(")")?);
        Ok(Raw::node("parameters", ch))
    }

    fn function_definition(&mut self) -> PResult {
        let mut ch = vec![self.punct(), self.identifier()?, self.parameters()?];
        if self.is_op("->") {
            ch.push(self.punct());
            ch.push(Raw::node("type", vec![self.expression()?]));
        }
        self.colon_block(&mut ch)?;
        Ok(Raw::node("function_definition", ch))
    }

    fn class_definition(&mut self) -> PResult {
        let mut ch = vec![self.punct(), self.identifier()?];
        if self.is_op("(") {
            ch.push(self.argument_list()?);
        }
        self.colon_block(&mut ch)?;
        Ok(Raw::node("class_definition", ch))
    }

    fn decorated_definition(&mut self) -> PResult {
        let mut ch = Vec::new();
        while self.is_op("@") {
            let at = self.punct();
            let expr = self.named_expression()?;
            if !self.at(TokKind::Newline) {
                return Err(());
            }
            self.advance();
            ch.push(Raw::node("decorator", vec![at, expr]));
        }
        let is_def = self.is_kw("def")
            || self.is_kw("class")
            || (self.is_kw("async") && self.is_kw_at(1, "def"));
        if !is_def {
            return Err(());
        }
        ch.push(self.compound_statement()?);
        Ok(Raw::node("decorated_definition", ch))
    }

    // ---- targets ----

    fn target(&mut self) -> PResult {
        if self.is_op("*") {
            let star = self.punct();
            let value = self.bitwise(0)?;
            return Ok(Raw::node("list_splat_pattern", vec![star, value]));
        }
        Ok(to_pattern(self.bitwise(0)?))
    }

    fn targets(&mut self) -> PResult {
        let mut items = vec![self.target()?];
        while self.is_op(",") {
            items.push(self.punct());
            if self.is_kw("in") || self.is_op("=") {
                break;
            }
            items.push(self.target()?);
        }
        Ok(if items.len() == 1 {
            items.pop().expect("one target")
        } else {
            Raw::node("pattern_list", items)
        })
    }

    // ---- expressions ----

    fn named_expression(&mut self) -> PResult {
        if self.is_identifier() && self.is_op_at(1, ":=") {
            let name = self.identifier()?;
            let op = self.punct();
            let value = self.expression()?;
            return Ok(Raw::node("named_expression", vec![name, op, value]));
        }
        self.expression()
    }

    fn expression(&mut self) -> PResult {
        self.enter()?;
        let result = self.expression_inner();
        self.leave();
        result
    }

    fn expression_inner(&mut self) -> PResult {
        if self.is_kw("lambda") {
            return self.lambda(false);
        }
        let body = self.or_test()?;
        if self.is_kw("if") {
            let if_kw = self.punct();
            let cond = self.or_test()?;
            let else_kw = self.expect_kw("else")?;
            let alt = self.expression()?;
            return Ok(Raw::node(
                "conditional_expression",
                vec![body, if_kw, cond, else_kw, alt],
            ));
        }
        Ok(body)
    }

    /// Expression without a trailing conditional (comprehension clauses).
    fn expression_nocond(&mut self) -> PResult {
        if self.is_kw("lambda") {
            return self.lambda(true);
        }
        self.or_test()
    }

    fn lambda(&mut self, nocond: bool) -> PResult {
        let mut ch = vec![self.punct()];
        if !self.is_op(":") {
            let mut params = Vec::new();
            loop {
                params.push(self.parameter(true)?);
                if self.is_op(",") {
                    params.push(self.punct());
                    if self.is_op(":") {
                        break;
                    }
                } else {
                    break;
                }
            }
            ch.push(Raw::node("lambda_parameters", params));
        }
        ch.push(self.expect_op(":")?);
        ch.push(if nocond {
            self.expression_nocond()?
        } else {
            self.expression()?
        });
        Ok(Raw::node("lambda", ch))
    }

    fn boolean(&mut self, op: &str, next: fn(&mut Self) -> PResult) -> PResult {
        let mut left = next(self)?;
        while self.is_kw(op) {
            let kw = self.punct();
            let right = next(self)?;
            left = Raw::node("boolean_operator", vec![left, kw, right]);
        }
        Ok(left)
    }

    fn or_test(&mut self) -> PResult {
        self.boolean("or", Self::and_test)
    }

    fn and_test(&mut self) -> PResult {
        self.boolean("and", Self::not_test)
    }

    fn not_test(&mut self) -> PResult {
        if self.is_kw("not") {
            self.enter()?;
            let kw = self.punct();
            let arg = self.not_test();
            self.leave();
            return Ok(Raw::node("not_operator", vec![kw, arg?]));
        }
        self.comparison()
    }

    fn comparison_op(&mut self) -> Option<Raw> {
        for op in ["<", ">", "==", ">=", "<=", "!=", "<>"] {
            if self.is_op(op) {
                return Some(self.punct());
            }
        }
        if self.is_kw("in") {
            return Some(self.punct());
        }
        if self.is_kw("not") && self.is_kw_at(1, "in") {
            let a = self.advance();
            let b = self.advance();
            return Some(Raw::anon("not in", a.start, b.end));
        }
        if self.is_kw("is") {
            if self.is_kw_at(1, "not") {
                let a = self.advance();
                let b = self.advance();
                return Some(Raw::anon("is not", a.start, b.end));
            }
            return Some(self.punct());
        }
        None
    }

    fn comparison(&mut self) -> PResult {
        let first = self.bitwise(0)?;
        let mut ch = vec![first];
        while let Some(op) = self.comparison_op() {
            ch.push(op);
            ch.push(self.bitwise(0)?);
        }
        Ok(if ch.len() == 1 {
            ch.pop().expect("operand")
        } else {
            Raw::node("comparison_operator", ch)
        })
    }

    fn bitwise(&mut self, level: usize) -> PResult {
        if level == BINARY_LEVELS.len() {
            return self.factor();
        }
        let mut left = self.bitwise(level + 1)?;
        while BINARY_LEVELS[level].iter().any(|op| self.is_op(op)) {
            let op = self.punct();
            let right = self.bitwise(level + 1)?;
            left = Raw::node("binary_operator", vec![left, op, right]);
        }
        Ok(left)
    }

    fn factor(&mut self) -> PResult {
        if self.is_op("-") || self.is_op("+") || self.is_op("~") {
            self.enter()?;
            let op = self.punct();
            let arg = self.factor();
            self.leave();
            return Ok(Raw::node("unary_operator", vec![op, arg?]));
        }
        self.power()
    }

    fn power(&mut self) -> PResult {
        let base = if self.is_kw("await") {
            let kw = self.punct();
            Raw::node("await", vec![kw, self.primary()?])
        } else {
            self.primary()?
        };
        if self.is_op("**") {
            let op = self.punct();
            self.enter()?;
            let exp = self.factor();
            self.leave();
            return Ok(Raw::node("binary_operator", vec![base, op, exp?]));
        }
        Ok(base)
    }

    fn primary(&mut self) -> PResult {
        let mut value = self.atom()?;
        loop {
            if self.is_op(".") {
                let dot = self.punct();
                let name = self.identifier()?;
                value = Raw::node("attribute", vec![value, dot, name]);
            } else if self.is_op("(") {
                let args = self.argument_list()?;
                value = Raw::node("call", vec![value, args]);
            } else if self.is_op("[") {
                let mut ch = vec![value, self.punct()];
                loop {
                    ch.push(self.subscript_item()?);
                    if !self.is_op(",") {
                        break;
                    }
                    ch.push(self.punct());
                    if self.is_op("]") {
                        break;
                    }
                }
                ch.push(self.expect_op("]")?);
                value = Raw::node("subscript", ch);
            } else {
                return Ok(value);
            }
        }
    }

    fn subscript_item(&mut self) -> PResult {
        let mut ch = Vec::new();
        if !self.is_op(":") {
            let e = self.named_expression()?;
            if !self.is_op(":") {
                return Ok(e);
            }
            ch.push(e);
        }
        ch.push(self.punct());
        if !self.is_op(":") && !self.is_op("]") && !self.is_op(",") {
            ch.push(self.expression()?);
        }
        if self.is_op(":") {
            ch.push(self.punct());
            if !self.is_op("]") && !self.is_op(",") {
                ch.push(self.expression()?);
            }
        }
        Ok(Raw::node("slice", ch))
    }

    fn argument(&mut self) -> PResult {
        if self.is_op("*") || self.is_op("**") {
            let kind = if self.is_op("*") {
                "list_splat"
            } else {
                "dictionary_splat"
            };
            let star = self.punct();
            return Ok(Raw::node(kind, vec![star, self.expression()?]));
        }
        if self.is_identifier() && self.is_op_at(1, "=") {
            let name = self.identifier()?;
            let eq = self.punct();
            let value = self.expression()?;
            return Ok(Raw::node("keyword_argument", vec![name, eq, value]));
        }
        self.named_expression()
    }

    fn argument_list(&mut self) -> PResult {
        self.enter()?;
        let result = self.argument_list_inner();
        self.leave();
        result
    }

    fn argument_list_inner(&mut self) -> PResult {
        let mut ch = vec![self.expect_op("(")?];
        if self.is_op(")") {
            ch.push(self.punct());
            return Ok(Raw::node("argument_list", ch));
        }
        let first = self.argument()?;
        if self.is_kw("for") || (self.is_kw("async") && self.is_kw_at(1, "for")) {
            ch.push(first);
            ch.extend(self.comprehension_clauses()?);
            ch.push(self.expect_op(")")?);
            return Ok(Raw::node("generator_expression", ch));
        }
        ch.push(first);
        while self.is_op(",") {
            ch.push(self.punct());
            if self.is_op(")") {
                break;
            }
            ch.push(self.argument()?);
        }
        ch.push(self.expect_op(")")?);
        Ok(Raw::node("argument_list", ch))
    }

    fn comprehension_clauses(&mut self) -> PResult<Vec<Raw>> {
        let mut out = Vec::new();
        loop {
            if self.is_kw("for") || (self.is_kw("async") && self.is_kw_at(1, "for")) {
                let mut ch = Vec::new();
                if self.is_kw("async") {
                    ch.push(self.punct());
                }
                ch.push(self.punct());
                ch.push(self.targets()?);
                ch.push(self.expect_kw("in")?);
                ch.push(self.expression_nocond()?);
                while self.is_op(",") && !self.is_op_at(1, ")") && !self.is_op_at(1, "]") {
                    ch.push(self.punct());
                    ch.push(self.expression_nocond()?);
                }
                out.push(Raw::node("for_in_clause", ch));
            } else if self.is_kw("if") && !out.is_empty() {
                let kw = self.punct();
                let cond = self.expression_nocond()?;
                out.push(Raw::node("if_clause", vec![kw, cond]));
            } else {
                break;
            }
        }
        if out.is_empty() {
            Err(())
        } else {
            Ok(out)
        }
    }

    fn at_comprehension(&self) -> bool {
        self.is_kw("for") || (self.is_kw("async") && self.is_kw_at(1, "for"))
    }

    fn star_or_named(&mut self) -> PResult {
        if self.is_op("*") {
            let star = self.punct();
            let value = self.bitwise(0)?;
            return Ok(Raw::node("list_splat", vec![star, value]));
        }
        self.named_expression()
    }

    /// Elements after the first one in a bracketed display, through the
    /// closing bracket.
    fn sequence_rest(&mut self, ch: &mut Vec<Raw>, close: &str) -> PResult<()> {
        while self.is_op(",") {
            ch.push(self.punct());
            if self.is_op(close) {
                break;
            }
            ch.push(self.star_or_named()?);
        }
        ch.push(self.expect_op(close)?);
        Ok(())
    }

    fn atom(&mut self) -> PResult {
        let t = self.tok();
        match t.kind {
            TokKind::Name => {
                let text = self.text_of(t);
                let kind = match text {
                    "True" => "true",
                    "False" => "false",
                    "None" => "none",
                    _ if KEYWORDS.contains(&text) => return Err(()),
                    _ => "identifier",
                };
                self.advance();
                Ok(Raw::leaf(kind, t.start, t.end))
            }
            TokKind::Number => {
                self.advance();
                Ok(Raw::leaf(number_kind(self.text_of(t)), t.start, t.end))
            }
            TokKind::Str => {
                let mut parts = Vec::new();
                while self.at(TokKind::Str) {
                    let s = self.advance();
                    parts.push(self.string_node(s));
                }
                Ok(if parts.len() == 1 {
                    parts.pop().expect("one string")
                } else {
                    Raw::node("concatenated_string", parts)
                })
            }
            TokKind::Op => {
                self.enter()?;
                let result = match self.text_of(t) {
                    "..." => {
                        self.advance();
                        Ok(Raw::leaf("ellipsis", t.start, t.end))
                    }
                    "(" => self.paren_atom(),
                    "[" => self.list_atom(),
                    "{" => self.brace_atom(),
                    _ => Err(()),
                };
                self.leave();
                result
            }
            _ => Err(()),
        }
    }

    fn paren_atom(&mut self) -> PResult {
        let mut ch = vec![self.punct()];
        if self.is_op(")") {
            ch.push(self.punct());
            return Ok(Raw::node("tuple", ch));
        }
        if self.is_kw("yield") {
            ch.push(self.yield_expression()?);
            ch.push(self.expect_op(")")?);
            return Ok(Raw::node("parenthesized_expression", ch));
        }
        let first = self.star_or_named()?;
        ch.push(first);
        if self.at_comprehension() {
            ch.extend(self.comprehension_clauses()?);
            ch.push(self.expect_op(")")?);
            return Ok(Raw::node("generator_expression", ch));
        }
        if self.is_op(",") {
            self.sequence_rest(&mut ch, ")")?;
            return Ok(Raw::node("tuple", ch));
        }
        ch.push(self.expect_op(")")?);
        Ok(Raw::node("parenthesized_expression", ch))
    }

    fn list_atom(&mut self) -> PResult {
        let mut ch = vec![self.punct()];
        if self.is_op("]") {
            ch.push(self.punct());
            return Ok(Raw::node("list", ch));
        }
        ch.push(self.star_or_named()?);
        if self.at_comprehension() {
            ch.extend(self.comprehension_clauses()?);
            ch.push(self.expect_op("]")?);
            return Ok(Raw::node("list_comprehension", ch));
        }
        self.sequence_rest(&mut ch, "]")?;
        Ok(Raw::node("list", ch))
    }

    fn dict_item(&mut self) -> PResult {
        if self.is_op("**") {
            let star = self.punct();
            return Ok(Raw::node("dictionary_splat", vec![star, self.bitwise(0)?]));
        }
        let key = self.expression()?;
        let colon = self.expect_op(":")?;
        let value = self.expression()?;
        Ok(Raw::node("pair", vec![key, colon, value]))
    }

    fn brace_atom(&mut self) -> PResult {
        let mut ch = vec![self.punct()];
        if self.is_op("}") {
            ch.push(self.punct());
            return Ok(Raw::node("dictionary", ch));
        }
        let is_dict = self.is_op("**") || {
            let save = self.i;
            let depth = self.depth;
            let probe = self.star_or_named().is_ok() && self.is_op(":");
            self.i = save;
            self.depth = depth;
            probe
        };
        if !is_dict {
            ch.push(self.star_or_named()?);
            if self.at_comprehension() {
                ch.extend(self.comprehension_clauses()?);
                ch.push(self.expect_op("}")?);
                return Ok(Raw::node("set_comprehension", ch));
            }
            self.sequence_rest(&mut ch, "}")?;
            return Ok(Raw::node("set", ch));
        }
        ch.push(self.dict_item()?);
        if self.at_comprehension() {
            ch.extend(self.comprehension_clauses()?);
            ch.push(self.expect_op("}")?);
            return Ok(Raw::node("dictionary_comprehension", ch));
        }
        while self.is_op(",") {
            ch.push(self.punct());
            if self.is_op("}") {
                break;
            }
            ch.push(self.dict_item()?);
        }
        ch.push(self.expect_op("}")?);
        Ok(Raw::node("dictionary", ch))
    }

    // ---- strings ----

    fn string_node(&self, t: Token) -> Raw {
        let text = self.text_of(t);
        let prefix_len = text.find(['"', '\'']).unwrap_or(0);
        let prefix = &text[..prefix_len];
        let quote = text.as_bytes()[prefix_len];
        let bytes = text.as_bytes();
        let triple = bytes.len() >= prefix_len + 6
            && bytes[prefix_len + 1] == quote
            && bytes[prefix_len + 2] == quote;
        let qlen = if triple { 3 } else { 1 };
        let lower = prefix.to_ascii_lowercase();
        let raw = lower.contains('r');
        let fmt = lower.contains('f');

        let open_end = t.start + prefix_len + qlen;
        let close_start = t.end - qlen;
        let mut ch = vec![Raw::leaf("string_start", t.start, open_end)];
        let body = &self.src[open_end..close_start];
        let b = body.as_bytes();
        let mut run_start = 0;
        let mut k = 0;
        let flush = |ch: &mut Vec<Raw>, from: usize, to: usize| {
            if to > from {
                ch.push(Raw::leaf("string_content", open_end + from, open_end + to));
            }
        };
        while k < b.len() {
            match b[k] {
                b'\\' if !raw => {
                    flush(&mut ch, run_start, k);
                    let len = escape_len(&body[k..]);
                    ch.push(Raw::leaf(
                        "escape_sequence",
                        open_end + k,
                        open_end + k + len,
                    ));
                    k += len;
                    run_start = k;
                }
                b'\\' => k += 1,
                b'{' if fmt && b.get(k + 1) == Some(&b'{') => k += 2,
                b'}' if fmt && b.get(k + 1) == Some(&b'}') => k += 2,
                b'{' if fmt => {
                    flush(&mut ch, run_start, k);
                    let (node, len) = self.interpolation(open_end + k, close_start);
                    ch.push(node);
                    k += len;
                    run_start = k;
                }
                _ => k += 1,
            }
        }
        flush(&mut ch, run_start, b.len());
        ch.push(Raw::leaf("string_end", close_start, t.end));
        Raw::node("string", ch)
    }

    /// Parse `{expr[=][!c][:spec]}` starting at `start`; returns the node and
    /// its byte length.
    fn interpolation(&self, start: usize, limit: usize) -> (Raw, usize) {
        let b = self.src.as_bytes();
        let mut depth = 0usize;
        let mut p = start + 1;
        let mut expr_end = None;
        let mut close = None;
        while p < limit {
            match b[p] {
                b'(' | b'[' | b'{' => depth += 1,
                b')' | b']' => depth = depth.saturating_sub(1),
                b'}' if depth > 0 => depth -= 1,
                b'}' => {
                    close = Some(p);
                    break;
                }
                b'\'' | b'"' => {
                    let q = b[p];
                    p += 1;
                    while p < limit && b[p] != q {
                        p += 1;
                    }
                }
                b'!' if depth == 0 && b.get(p + 1) != Some(&b'=') && expr_end.is_none() => {
                    expr_end = Some(p)
                }
                b':' if depth == 0 && expr_end.is_none() => expr_end = Some(p),
                b'=' if depth == 0
                    && expr_end.is_none()
                    && !matches!(b.get(p + 1), Some(b'='))
                    && !matches!(b[p - 1], b'=' | b'!' | b'<' | b'>') =>
                {
                    expr_end = Some(p)
                }
                _ => {}
            }
            p += 1;
        }
        let Some(close) = close else {
            return (Raw::leaf("ERROR", start, limit), limit - start);
        };
        let expr_end = expr_end.unwrap_or(close);
        let mut ch = vec![Raw::anon("{", start, start + 1)];
        ch.push(self.sub_expression(start + 1, expr_end));
        let mut q = expr_end;
        if b[q] == b'=' {
            ch.push(Raw::anon("=", q, q + 1));
            q += 1;
        }
        if b[q] == b'!' {
            let end = self.src[q..close].find(':').map_or(close, |e| q + e);
            ch.push(Raw::leaf("type_conversion", q, end));
            q = end;
        }
        if b[q] == b':' {
            ch.push(Raw::leaf("format_specifier", q, close));
        }
        ch.push(Raw::anon("}", close, close + 1));
        (Raw::node("interpolation", ch), close + 1 - start)
    }

    fn sub_expression(&self, start: usize, end: usize) -> Raw {
        let toks: Vec<Token> = tokenize(&self.src[start..end])
            .into_iter()
            .filter(|t| {
                !matches!(
                    t.kind,
                    TokKind::Newline | TokKind::Indent | TokKind::Dedent | TokKind::Comment
                )
            })
            .map(|t| Token {
                kind: t.kind,
                start: t.start + start,
                end: t.end + start,
            })
            .collect();
        let mut sub = Parser::new(self.src, toks);
        match sub.expression_list("expression_list") {
            Ok(node) if sub.at(TokKind::End) => node,
            _ => Raw::leaf("ERROR", start, end),
        }
    }
}

fn number_kind(text: &str) -> &'static str {
    let lower = text.to_ascii_lowercase();
    let is_float = !lower.starts_with("0x") && (lower.contains('.') || lower.contains('e'));
    if is_float {
        "float"
    } else {
        "integer"
    }
}

fn escape_len(s: &str) -> usize {
    let b = s.as_bytes();
    let hex_run = |n: usize| {
        1 + 1
            + b[2..]
                .iter()
                .take(n)
                .take_while(|c| c.is_ascii_hexdigit())
                .count()
    };
    match b.get(1) {
        None => 1,
        Some(b'x') => hex_run(2),
        Some(b'u') => hex_run(4),
        Some(b'U') => hex_run(8),
        Some(b'N') if b.get(2) == Some(&b'{') => s.find('}').map_or(2, |e| e + 1),
        Some(b'0'..=b'7') => {
            1 + b[1..]
                .iter()
                .take(3)
                .take_while(|c| (b'0'..=b'7').contains(c))
                .count()
        }
        Some(b'\r') if b.get(2) == Some(&b'\n') => 3,
        Some(_) => 1 + s[1..].chars().next().map_or(0, char::len_utf8),
    }
}

/// Re-label an expression used in assignment-target position.
fn to_pattern(node: Raw) -> Raw {
    match node.kind.as_str() {
        "list_splat" => Raw {
            kind: "list_splat_pattern".into(),
            ..node
        },
        "tuple" => Raw {
            kind: "tuple_pattern".into(),
            children: node.children.into_iter().map(to_pattern).collect(),
            ..node
        },
        "list" => Raw {
            kind: "list_pattern".into(),
            children: node.children.into_iter().map(to_pattern).collect(),
            ..node
        },
        _ => node,
    }
}

fn insert_comment(node: &mut Raw, comment: Raw) {
    let pos = node.children.partition_point(|c| c.start < comment.start);
    if pos > 0 {
        let prev = &mut node.children[pos - 1];
        if !prev.leaf && prev.start <= comment.start && comment.end <= prev.end {
            insert_comment(prev, comment);
            return;
        }
    }
    node.children.insert(pos, comment);
}

pub(crate) fn parse(src: &str) -> Raw {
    let all = tokenize(src);
    let (comments, toks): (Vec<Token>, Vec<Token>) =
        all.into_iter().partition(|t| t.kind == TokKind::Comment);
    let mut root = Parser::new(src, toks).module();
    for c in comments {
        insert_comment(&mut root, Raw::leaf("comment", c.start, c.end));
    }
    root
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sexp(src: &str) -> String {
        fn go(n: &Raw, out: &mut String) {
            if n.leaf {
                out.push_str(&n.kind);
                return;
            }
            out.push('(');
            out.push_str(&n.kind);
            for c in &n.children {
                out.push(' ');
                go(c, out);
            }
            out.push(')');
        }
        let mut s = String::new();
        go(&parse(src), &mut s);
        s
    }

    fn has_error(src: &str) -> bool {
        sexp(src).contains("ERROR")
    }

    #[test]
    fn print_hello() {
        assert_eq!(
            sexp("print(\"hello\")"),
            "(module (expression_statement (call identifier (argument_list ( (string string_start string_content string_end) )))))"
        );
    }

    #[test]
    fn empty_module() {
        let root = parse("");
        assert_eq!(root.kind, "module");
        assert!(root.children.is_empty());
    }

    #[test]
    fn broken_def_yields_error() {
        assert!(has_error("def f(:"));
        assert!(has_error("def f(:\n    pass\n"));
    }

    #[test]
    fn error_recovery_continues() {
        let s = sexp("x = (\ny = 2\n");
        assert!(s.contains("ERROR"));
        let s = sexp("$$$\ny = 2\n");
        assert!(
            s.ends_with("(expression_statement (assignment identifier = integer)))"),
            "{s}"
        );
    }

    #[test]
    fn assignment_and_binary() {
        assert_eq!(
            sexp("x = 1 + 2"),
            "(module (expression_statement (assignment identifier = (binary_operator integer + integer))))"
        );
        assert_eq!(
            sexp("a, b = 1, 2"),
            "(module (expression_statement (assignment (pattern_list identifier , identifier) = (expression_list integer , integer))))"
        );
        assert_eq!(
            sexp("x: int = 3"),
            "(module (expression_statement (assignment identifier : (type identifier) = integer)))"
        );
        assert_eq!(
            sexp("n += 1"),
            "(module (expression_statement (augmented_assignment identifier += integer)))"
        );
    }

    #[test]
    fn imports() {
        assert_eq!(
            sexp("import os.path as p, sys"),
            "(module (import_statement import (aliased_import (dotted_name identifier . identifier) as identifier) , (dotted_name identifier)))"
        );
        assert_eq!(
            sexp("from . import x"),
            "(module (import_from_statement from (relative_import (import_prefix .)) import (dotted_name identifier)))"
        );
        assert!(sexp("from __future__ import annotations").contains("future_import_statement"));
    }

    #[test]
    fn function_and_class() {
        let s = sexp("@dec\nasync def f(a, b: int = 1, *args, **kw) -> None:\n    return a\n");
        assert!(s.starts_with("(module (decorated_definition (decorator @ identifier) (function_definition async def identifier (parameters"), "{s}");
        assert!(s.contains("typed_default_parameter"));
        assert!(s.contains("list_splat_pattern"));
        assert!(s.contains("dictionary_splat_pattern"));
        assert!(s.contains("(block (return_statement return identifier))"));
        let s = sexp("class A(B):\n    x = 1\n");
        assert!(s.starts_with(
            "(module (class_definition class identifier (argument_list ( identifier )) : (block"
        ));
    }

    #[test]
    fn control_flow() {
        let src = "if a:\n    pass\nelif b:\n    pass\nelse:\n    pass\nfor i in range(3):\n    continue\nwhile x := f():\n    break\ntry:\n    pass\nexcept E as e:\n    raise\nfinally:\n    pass\nwith open(p) as fh, g():\n    pass\n";
        let s = sexp(src);
        assert!(!s.contains("ERROR"), "{s}");
        for k in [
            "elif_clause",
            "else_clause",
            "for_statement",
            "while_statement",
            "named_expression",
            "except_clause",
            "finally_clause",
            "with_clause",
            "as_pattern_target",
        ] {
            assert!(s.contains(k), "{k} missing in {s}");
        }
    }

    #[test]
    fn comparisons() {
        assert_eq!(
            sexp("a not in b is not c"),
            "(module (expression_statement (comparison_operator identifier not in identifier is not identifier)))"
        );
        assert_eq!(sexp("not a or b and c"),
            "(module (expression_statement (boolean_operator (not_operator not identifier) or (boolean_operator identifier and identifier))))");
    }

    #[test]
    fn collections_and_comprehensions() {
        let s = sexp("[x for x in y if x]\n{k: v for k, v in d}\n{1, 2}\n(a for a in b)\nf(x for x in y)\nd = {**a, 'k': 1}\n");
        assert!(!s.contains("ERROR"), "{s}");
        for k in [
            "list_comprehension",
            "dictionary_comprehension",
            "set",
            "generator_expression",
            "if_clause",
            "dictionary_splat",
            "pair",
        ] {
            assert!(s.contains(k), "{k} missing in {s}");
        }
    }

    #[test]
    fn strings() {
        assert_eq!(
            sexp("'a\\nb'"),
            "(module (expression_statement (string string_start string_content escape_sequence string_content string_end)))"
        );
        assert_eq!(
            sexp("f'x{y!r:>3}'"),
            "(module (expression_statement (string string_start string_content (interpolation { identifier type_conversion format_specifier }) string_end)))"
        );
        assert_eq!(
            sexp("'a' 'b'"),
            "(module (expression_statement (concatenated_string (string string_start string_content string_end) (string string_start string_content string_end))))"
        );
        assert_eq!(
            sexp("''"),
            "(module (expression_statement (string string_start string_end)))"
        );
        assert!(has_error("'unterminated\n"));
    }

    #[test]
    fn comments_are_kept() {
        let s = sexp("# top\nx = 1  # trailing\ndef f():\n    # inner\n    pass\n");
        assert_eq!(s.matches("comment").count(), 3, "{s}");
        assert!(s.starts_with("(module comment"));
    }

    #[test]
    fn slices_and_lambda() {
        let s = sexp("a[1:2, ::3]\nf = lambda x, y=2: x if y else -x\n");
        assert!(!s.contains("ERROR"), "{s}");
        assert!(s.contains("slice"));
        assert!(s.contains("(lambda lambda (lambda_parameters identifier , (default_parameter identifier = integer)) : (conditional_expression"));
    }

    #[test]
    fn deep_nesting_does_not_overflow() {
        let src = format!("{}1{}", "(".repeat(5000), ")".repeat(5000));
        assert!(has_error(&src));
        let src = format!("x = {}1", "-".repeat(5000));
        assert!(has_error(&src));
    }

    #[test]
    fn python2_print_is_error() {
        assert!(has_error("print 'x'\n"));
    }
}
