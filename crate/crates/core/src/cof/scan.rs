//! Line classifier for indentation-based source.
//!
//! Tracks just enough lexical state (open triple-quoted strings, bracket depth,
//! backslash continuations) to tell whether a line begins a new logical line.
//! Only logical-line starts at column zero can open a definition.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LineKind {
    /// Whitespace only, outside any string or bracket.
    Blank,
    /// Indented, or a continuation of the previous logical line.
    Body,
    /// Zero-indent `# ...`.
    Comment,
    /// Zero-indent `@decorator`.
    Decorator,
    /// Zero-indent `def name(` or `async def name(`.
    Def,
    /// Any other zero-indent logical line.
    Statement,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Line<'a> {
    /// Line content including its terminator.
    pub text: &'a str,
    pub kind: LineKind,
    /// Function name for `Def` lines.
    pub def_name: Option<&'a str>,
}

#[derive(Debug, Default, Clone, Copy)]
struct LexState {
    triple: Option<u8>,
    depth: u32,
    backslash: bool,
}

impl LexState {
    fn at_logical_start(&self) -> bool {
        self.triple.is_none() && self.depth == 0 && !self.backslash
    }

    /// Advance over one physical line.
    fn feed(&mut self, line: &str) {
        let bytes = line.as_bytes();
        let mut i = 0;
        self.backslash = false;
        while i < bytes.len() {
            if let Some(q) = self.triple {
                if bytes[i] == b'\\' {
                    i += 2;
                    continue;
                }
                if bytes[i..].starts_with(&[q, q, q]) {
                    self.triple = None;
                    i += 3;
                } else {
                    i += 1;
                }
                continue;
            }
            match bytes[i] {
                b'#' => break,
                q @ (b'"' | b'\'') => {
                    if bytes[i..].starts_with(&[q, q, q]) {
                        self.triple = Some(q);
                        i += 3;
                    } else {
                        i = skip_short_string(bytes, i + 1, q);
                    }
                }
                b'(' | b'[' | b'{' => {
                    self.depth += 1;
                    i += 1;
                }
                b')' | b']' | b'}' => {
                    self.depth = self.depth.saturating_sub(1);
                    i += 1;
                }
                b'\\' => {
                    let rest = &line[i + 1..];
                    if rest.trim_end_matches(['\n', '\r']).is_empty() {
                        self.backslash = true;
                    }
                    i += 2;
                }
                _ => i += 1,
            }
        }
    }
}

/// Index just past the closing quote, or end of line when unterminated.
fn skip_short_string(bytes: &[u8], mut i: usize, quote: u8) -> usize {
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'\n' => return i,
            b if b == quote => return i + 1,
            _ => i += 1,
        }
    }
    i
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

/// `def name(` / `async def name(` at column zero; returns `name`.
pub(crate) fn def_name(line: &str) -> Option<&str> {
    let rest = line.strip_prefix("async").map_or(line, |r| {
        if r.starts_with([' ', '\t']) {
            r.trim_start_matches([' ', '\t'])
        } else {
            line
        }
    });
    let rest = rest.strip_prefix("def")?;
    if !rest.starts_with([' ', '\t']) {
        return None;
    }
    let rest = rest.trim_start_matches([' ', '\t']);
    let mut chars = rest.char_indices();
    let (_, first) = chars.next()?;
    if !is_ident_start(first) {
        return None;
    }
    let end = chars
        .find(|&(_, c)| !is_ident_continue(c))
        .map_or(rest.len(), |(i, _)| i);
    let after = rest[end..].trim_start_matches([' ', '\t']);
    if after.starts_with('(') || after.starts_with('[') {
        Some(&rest[..end])
    } else {
        None
    }
}

pub(crate) fn classify(source: &str) -> Vec<Line<'_>> {
    let mut state = LexState::default();
    let mut out = Vec::new();
    for text in source.split_inclusive('\n') {
        let logical = state.at_logical_start();
        let content = text.trim_end_matches(['\n', '\r']);
        let mut def = None;
        let kind = if !logical {
            LineKind::Body
        } else if content.trim().is_empty() {
            LineKind::Blank
        } else if content.starts_with([' ', '\t']) {
            LineKind::Body
        } else if content.starts_with('#') {
            LineKind::Comment
        } else if content.starts_with('@') {
            LineKind::Decorator
        } else if let Some(name) = def_name(content) {
            def = Some(name);
            LineKind::Def
        } else {
            LineKind::Statement
        };
        state.feed(text);
        out.push(Line {
            text,
            kind,
            def_name: def,
        });
    }
    out
}

/// Position just past the `:` that closes a `def` signature, scanning from the
/// start of `text`. Strings and bracketed regions are skipped.
pub(crate) fn signature_end(text: &str) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut depth = 0u32;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'#' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            q @ (b'"' | b'\'') => {
                if bytes[i..].starts_with(&[q, q, q]) {
                    let close = text[i + 3..].find(std::str::from_utf8(&[q, q, q]).unwrap())?;
                    i += 3 + close + 3;
                } else {
                    i = skip_short_string(bytes, i + 1, q);
                }
            }
            b'(' | b'[' | b'{' => {
                depth += 1;
                i += 1;
            }
            b')' | b']' | b'}' => {
                depth = depth.saturating_sub(1);
                i += 1;
            }
            b':' if depth == 0 => return Some(i + 1),
            _ => i += 1,
        }
    }
    None
}
