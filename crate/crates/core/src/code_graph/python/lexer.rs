//! Python tokenizer with INDENT/DEDENT tracking.
//!
//! Newlines inside brackets are dropped. An unbalanced bracket would swallow
//! the rest of the file, so a line starting at column 0 with a statement-only
//! keyword resets the bracket depth.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TokKind {
    Name,
    Number,
    Str,
    Op,
    Newline,
    Indent,
    Dedent,
    Comment,
    /// A byte sequence that starts no valid token, or an unterminated string.
    Error,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Token {
    pub kind: TokKind,
    pub start: usize,
    pub end: usize,
}

const OPERATORS: [&str; 50] = [
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "**", "//", "<<", ">>", "<=", ">=", "==", "!=",
    "<>", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "@=", "+", "-", "*", "/", "%", "@", "&",
    "|", "^", "~", "<", ">", "(", ")", "[", "]", "{", "}", ",", ":", ";", ".", "=", "!", "`",
];

const RESET_KEYWORDS: [&str; 14] = [
    "def", "class", "import", "try", "while", "with", "return", "pass", "raise", "global",
    "nonlocal", "assert", "break", "continue",
];

pub(crate) fn is_string_prefix(word: &str) -> bool {
    matches!(
        word.to_ascii_lowercase().as_str(),
        "r" | "u" | "b" | "f" | "br" | "rb" | "fr" | "rf"
    )
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_char(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

struct Lexer<'s> {
    src: &'s str,
    bytes: &'s [u8],
    pos: usize,
    depth: usize,
    indents: Vec<usize>,
    out: Vec<Token>,
}

impl<'s> Lexer<'s> {
    fn push(&mut self, kind: TokKind, start: usize, end: usize) {
        self.out.push(Token { kind, start, end });
    }

    fn char_at(&self, pos: usize) -> Option<char> {
        self.src[pos..].chars().next()
    }

    fn last_significant(&self) -> Option<TokKind> {
        self.out
            .iter()
            .rev()
            .map(|t| t.kind)
            .find(|k| *k != TokKind::Comment)
    }

    fn newline_len(&self, pos: usize) -> usize {
        match self.bytes.get(pos) {
            Some(b'\r') if self.bytes.get(pos + 1) == Some(&b'\n') => 2,
            Some(b'\r' | b'\n') => 1,
            _ => 0,
        }
    }

    fn emit_newline(&mut self, start: usize, end: usize) {
        if matches!(
            self.last_significant(),
            Some(TokKind::Name | TokKind::Number | TokKind::Str | TokKind::Op | TokKind::Error)
        ) {
            self.push(TokKind::Newline, start, end);
        }
    }

    fn word_at(&self, pos: usize) -> &str {
        let rest = &self.src[pos..];
        let end = rest.find(|c: char| !is_ident_char(c)).unwrap_or(rest.len());
        &rest[..end]
    }

    /// Handle the start of a physical line. Returns false at end of input.
    fn line_start(&mut self) -> bool {
        loop {
            let mut col = 0usize;
            let mut p = self.pos;
            while let Some(&b) = self.bytes.get(p) {
                match b {
                    b' ' => col += 1,
                    b'\t' => col = (col / 8 + 1) * 8,
                    b'\x0c' => col = 0,
                    _ => break,
                }
                p += 1;
            }
            if p >= self.bytes.len() {
                self.pos = p;
                return false;
            }
            let nl = self.newline_len(p);
            if nl > 0 {
                self.pos = p + nl;
                continue;
            }
            if self.bytes[p] == b'#' {
                let end = self.src[p..]
                    .find(['\n', '\r'])
                    .map_or(self.bytes.len(), |e| p + e);
                self.push(TokKind::Comment, p, end);
                self.pos = end + self.newline_len(end);
                if end >= self.bytes.len() {
                    return false;
                }
                continue;
            }
            if self.depth > 0 {
                if col == 0 && RESET_KEYWORDS.contains(&self.word_at(p)) {
                    self.depth = 0;
                    self.emit_newline(p, p);
                } else {
                    self.pos = p;
                    return true;
                }
            }
            let top = *self.indents.last().expect("indent stack never empty");
            if col > top {
                self.indents.push(col);
                self.push(TokKind::Indent, p, p);
            } else {
                while col < *self.indents.last().expect("indent stack never empty") {
                    self.indents.pop();
                    self.push(TokKind::Dedent, p, p);
                }
                if col > *self.indents.last().expect("indent stack never empty") {
                    // dedent to a level that was never opened
                    self.indents.push(col);
                    self.push(TokKind::Error, p, p);
                }
            }
            self.pos = p;
            return true;
        }
    }

    fn string(&mut self, start: usize, quote_pos: usize) {
        let quote = self.bytes[quote_pos];
        let triple = self.bytes.get(quote_pos + 1) == Some(&quote)
            && self.bytes.get(quote_pos + 2) == Some(&quote);
        let mut p = quote_pos + if triple { 3 } else { 1 };
        loop {
            match self.bytes.get(p) {
                None => {
                    self.push(TokKind::Error, start, self.bytes.len());
                    self.pos = self.bytes.len();
                    return;
                }
                Some(b'\\') => {
                    p += 1 + self.newline_len(p + 1).max(1).min(self.bytes.len() - p - 1);
                }
                Some(b'\n' | b'\r') if !triple => {
                    self.push(TokKind::Error, start, p);
                    self.pos = p;
                    return;
                }
                Some(&b) if b == quote => {
                    if !triple {
                        p += 1;
                        break;
                    }
                    if self.bytes.get(p + 1) == Some(&quote)
                        && self.bytes.get(p + 2) == Some(&quote)
                    {
                        p += 3;
                        break;
                    }
                    p += 1;
                }
                Some(_) => p += 1,
            }
        }
        self.push(TokKind::Str, start, p);
        self.pos = p;
    }

    fn number(&mut self, start: usize) {
        let b = self.bytes;
        let mut p = start;
        let digits = |p: &mut usize, pred: fn(u8) -> bool| {
            while let Some(&c) = b.get(*p) {
                if pred(c) || c == b'_' {
                    *p += 1;
                } else {
                    break;
                }
            }
        };
        if b[p] == b'0' && matches!(b.get(p + 1), Some(b'x' | b'X' | b'o' | b'O' | b'b' | b'B')) {
            p += 2;
            digits(&mut p, |c| c.is_ascii_hexdigit());
        } else {
            digits(&mut p, |c| c.is_ascii_digit());
            if b.get(p) == Some(&b'.') {
                p += 1;
                digits(&mut p, |c| c.is_ascii_digit());
            }
            if matches!(b.get(p), Some(b'e' | b'E')) {
                let mut q = p + 1;
                if matches!(b.get(q), Some(b'+' | b'-')) {
                    q += 1;
                }
                if b.get(q).is_some_and(u8::is_ascii_digit) {
                    p = q;
                    digits(&mut p, |c| c.is_ascii_digit());
                }
            }
        }
        if matches!(b.get(p), Some(b'j' | b'J' | b'l' | b'L')) {
            p += 1;
        }
        self.push(TokKind::Number, start, p);
        self.pos = p;
    }

    fn run(mut self) -> Vec<Token> {
        let mut at_line_start = true;
        loop {
            if at_line_start {
                at_line_start = false;
                if !self.line_start() {
                    break;
                }
            }
            let Some(c) = self.char_at(self.pos) else {
                break;
            };
            let start = self.pos;
            match c {
                ' ' | '\t' | '\x0c' => self.pos += 1,
                '\r' | '\n' => {
                    let nl = self.newline_len(start);
                    if self.depth == 0 {
                        self.emit_newline(start, start + nl);
                    }
                    self.pos += nl;
                    at_line_start = true;
                }
                '#' => {
                    let end = self.src[start..]
                        .find(['\n', '\r'])
                        .map_or(self.bytes.len(), |e| start + e);
                    self.push(TokKind::Comment, start, end);
                    self.pos = end;
                }
                '\\' if self.newline_len(start + 1) > 0 => {
                    self.pos += 1 + self.newline_len(start + 1);
                }
                '"' | '\'' => self.string(start, start),
                c if c.is_ascii_digit() => self.number(start),
                '.' if self.bytes.get(start + 1).is_some_and(u8::is_ascii_digit) => {
                    self.number(start)
                }
                c if is_ident_start(c) => {
                    let word = self.word_at(start);
                    let end = start + word.len();
                    if is_string_prefix(word) && matches!(self.bytes.get(end), Some(b'"' | b'\'')) {
                        self.string(start, end);
                    } else {
                        self.push(TokKind::Name, start, end);
                        self.pos = end;
                    }
                }
                _ => {
                    let rest = &self.src[start..];
                    if let Some(op) = OPERATORS.iter().find(|op| rest.starts_with(*op)) {
                        match *op {
                            "(" | "[" | "{" => self.depth += 1,
                            ")" | "]" | "}" => self.depth = self.depth.saturating_sub(1),
                            _ => {}
                        }
                        self.push(TokKind::Op, start, start + op.len());
                        self.pos = start + op.len();
                    } else {
                        self.push(TokKind::Error, start, start + c.len_utf8());
                        self.pos = start + c.len_utf8();
                    }
                }
            }
        }
        let end = self.bytes.len();
        self.emit_newline(end, end);
        while self.indents.len() > 1 {
            self.indents.pop();
            self.push(TokKind::Dedent, end, end);
        }
        self.push(TokKind::End, end, end);
        self.out
    }
}

pub(crate) fn tokenize(src: &str) -> Vec<Token> {
    Lexer {
        src,
        bytes: src.as_bytes(),
        pos: 0,
        depth: 0,
        indents: vec![0],
        out: Vec::new(),
    }
    .run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use TokKind::*;

    fn kinds(src: &str) -> Vec<TokKind> {
        tokenize(src).into_iter().map(|t| t.kind).collect()
    }

    fn texts(src: &str) -> Vec<&str> {
        tokenize(src)
            .into_iter()
            .map(|t| &src[t.start..t.end])
            .collect()
    }

    #[test]
    fn simple_call() {
        assert_eq!(kinds("print(\"hello\")"), [Name, Op, Str, Op, Newline, End]);
    }

    #[test]
    fn indentation() {
        let src = "if x:\n    y = 1\n\n    # c\nz\n";
        assert_eq!(
            kinds(src),
            [
                Name, Name, Op, Newline, Indent, Name, Op, Number, Newline, Comment, Dedent, Name,
                Newline, End
            ]
        );
    }

    #[test]
    fn brackets_suppress_newlines() {
        assert_eq!(
            kinds("f(1,\n  2)\n"),
            [Name, Op, Number, Op, Number, Op, Newline, End]
        );
    }

    #[test]
    fn strings_and_prefixes() {
        assert_eq!(texts("rb'\\''"), ["rb'\\''", "", ""]);
        assert_eq!(texts("f\"{x}\" u'a'"), ["f\"{x}\"", "u'a'", "", ""]);
        assert_eq!(kinds("'''a\nb'''"), [Str, Newline, End]);
        assert_eq!(kinds("'abc\nx"), [Error, Newline, Name, Newline, End]);
    }

    #[test]
    fn numbers() {
        assert_eq!(
            texts("0x1F 1_000 3.14e-2 .5 2j"),
            ["0x1F", "1_000", "3.14e-2", ".5", "2j", "", ""]
        );
    }

    #[test]
    fn operators_longest_match() {
        assert_eq!(
            texts("a //= b ** c -> d"),
            ["a", "//=", "b", "**", "c", "->", "d", "", ""]
        );
    }

    #[test]
    fn unbalanced_bracket_reset() {
        let src = "x = (1,\ndef f():\n    pass\n";
        let k = kinds(src);
        assert_eq!(k.iter().filter(|k| **k == Indent).count(), 1);
        assert_eq!(k.iter().filter(|k| **k == Newline).count(), 3);
    }

    #[test]
    fn empty_input() {
        assert_eq!(kinds(""), [End]);
        assert_eq!(kinds("\n\n# only comment\n"), [Comment, End]);
    }
}
