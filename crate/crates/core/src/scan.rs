//! Lexical scanner for OpenMP constructs in C source text, plus the
//! region-selection config format.
//!
//! The scanner does not parse C. It tokenizes just enough (comments, string
//! and character literals, preprocessor lines with backslash continuations,
//! brackets) to find `#pragma omp` directives and resolve the extent of the
//! structured block that follows each one. Macros are not expanded, so a
//! pragma produced by a macro is invisible here.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

/// Identifier assigned to a region within one instrumentation run.
pub type RegionId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegionKind {
    ParallelBlock,
    ParallelFor,
    ParallelSections,
    Single,
    Task,
}

impl RegionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RegionKind::ParallelBlock => "parallel",
            RegionKind::ParallelFor => "parallel_for",
            RegionKind::ParallelSections => "parallel_sections",
            RegionKind::Single => "single",
            RegionKind::Task => "task",
        }
    }

    /// Whether the construct creates a team, and so accepts `num_threads`.
    pub fn is_parallel(self) -> bool {
        matches!(
            self,
            RegionKind::ParallelBlock | RegionKind::ParallelFor | RegionKind::ParallelSections
        )
    }
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "parallel" => RegionKind::ParallelBlock,
            "parallel_for" => RegionKind::ParallelFor,
            "parallel_sections" => RegionKind::ParallelSections,
            "single" => RegionKind::Single,
            "task" => RegionKind::Task,
            other => return Err(format!("unknown region kind `{other}`")),
        })
    }
}

/// An instrumentable OpenMP construct found in a source file.
///
/// All line numbers are 1-based and refer to the scanned text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub id: RegionId,
    pub kind: RegionKind,
    pub file: String,
    pub pragma_line: usize,
    /// Last physical line of the directive (differs from `pragma_line` when
    /// the pragma uses backslash continuations).
    pub pragma_end_line: usize,
    pub block_begin: usize,
    pub block_end: usize,
    /// Enclosing function name, empty when it could not be resolved.
    pub function: String,
    /// True when the construct is the sole, unbraced body of an enclosing
    /// statement or directive. Hooks inserted around it need their own scope.
    pub sole_statement: bool,
    /// The directive already carries a `num_threads` clause.
    pub has_num_threads: bool,
    /// The block's last line also holds unrelated code or an unterminated
    /// comment, so nothing can be inserted after it.
    pub block_end_shared: bool,
}

impl Region {
    /// Basename of `file`, used for config matching.
    pub fn file_name(&self) -> &str {
        basename(&self.file)
    }
}

fn basename(path: &str) -> &str {
    Path::new(path).file_name().and_then(|s| s.to_str()).unwrap_or(path)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScanError {
    #[error("{file}:{line}:{column}: unbalanced brace")]
    UnbalancedBraces { file: String, line: usize, column: usize },
    #[error("{file}:{line}: `#pragma omp` is not followed by a statement")]
    PragmaWithoutStatement { file: String, line: usize },
    #[error("{file}:{line}: unterminated comment or literal")]
    Unterminated { file: String, line: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Ident(String),
    Punct(char),
    Literal,
    /// `#pragma omp ...`; payload is the directive text after `omp` with
    /// continuations joined.
    OmpPragma(String),
    /// Any other preprocessor line.
    Directive,
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    line: usize,
    end_line: usize,
    column: usize,
}

impl Token {
    fn is_punct(&self, c: char) -> bool {
        self.kind == TokKind::Punct(c)
    }

    fn is_ident(&self, s: &str) -> bool {
        matches!(&self.kind, TokKind::Ident(i) if i == s)
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    line_start: usize,
    /// Only whitespace (or comments) seen since the last newline.
    at_line_start: bool,
    /// Lines whose newline is swallowed by a comment.
    continued: Vec<usize>,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            line_start: 0,
            at_line_start: true,
            continued: Vec::new(),
        }
    }

    fn peek(&self, off: usize) -> Option<u8> {
        self.src.get(self.pos + off).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek(0)?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.line_start = self.pos;
            self.at_line_start = true;
        }
        Some(c)
    }

    fn column(&self) -> usize {
        self.pos - self.line_start + 1
    }

    /// Skips a backslash-newline splice at the current position, if any.
    fn skip_splice(&mut self) -> bool {
        if self.peek(0) == Some(b'\\') {
            if self.peek(1) == Some(b'\n') {
                self.bump();
                self.bump();
                return true;
            }
            if self.peek(1) == Some(b'\r') && self.peek(2) == Some(b'\n') {
                self.bump();
                self.bump();
                self.bump();
                return true;
            }
        }
        false
    }

    fn skip_block_comment(&mut self) -> Result<(), usize> {
        let start = self.line;
        self.pos += 2;
        loop {
            match self.peek(0) {
                None => return Err(start),
                Some(b'*') if self.peek(1) == Some(b'/') => {
                    self.pos += 2;
                    return Ok(());
                }
                Some(c) => {
                    if c == b'\n' {
                        self.continued.push(self.line);
                    }
                    self.bump();
                }
            }
        }
    }

    fn skip_line_comment(&mut self) {
        loop {
            let line = self.line;
            if self.skip_splice() {
                self.continued.push(line);
                continue;
            }
            match self.peek(0) {
                None | Some(b'\n') => return,
                Some(_) => {
                    self.bump();
                }
            }
        }
    }

    fn skip_quoted(&mut self, quote: u8) -> Result<(), usize> {
        let start = self.line;
        self.bump();
        loop {
            if self.skip_splice() {
                continue;
            }
            match self.peek(0) {
                None | Some(b'\n') => return Err(start),
                Some(b'\\') => {
                    self.bump();
                    self.bump();
                }
                Some(c) if c == quote => {
                    self.bump();
                    return Ok(());
                }
                Some(_) => {
                    self.bump();
                }
            }
        }
    }

    /// Reads a preprocessor logical line starting at `#`. Comments inside the
    /// line are dropped; string literals are kept verbatim.
    fn read_directive(&mut self) -> Result<String, usize> {
        let mut text = String::new();
        self.bump(); // '#'
        loop {
            if self.skip_splice() {
                text.push(' ');
                continue;
            }
            match self.peek(0) {
                None | Some(b'\n') => break,
                Some(b'/') if self.peek(1) == Some(b'*') => {
                    self.skip_block_comment()?;
                    text.push(' ');
                }
                Some(b'/') if self.peek(1) == Some(b'/') => {
                    self.skip_line_comment();
                }
                Some(q @ (b'"' | b'\'')) => {
                    let from = self.pos;
                    self.skip_quoted(q)?;
                    text.push_str(&String::from_utf8_lossy(&self.src[from..self.pos]));
                }
                Some(c) => {
                    self.bump();
                    text.push(c as char);
                }
            }
        }
        Ok(text)
    }

    fn tokenize(mut self) -> Result<(Vec<Token>, Vec<usize>), usize> {
        let mut out = Vec::new();
        loop {
            if self.skip_splice() {
                continue;
            }
            let Some(c) = self.peek(0) else { break };
            let line = self.line;
            let column = self.column();
            match c {
                b'\n' => {
                    self.bump();
                }
                b' ' | b'\t' | b'\r' | b'\x0b' | b'\x0c' => {
                    self.pos += 1;
                }
                b'/' if self.peek(1) == Some(b'*') => self.skip_block_comment()?,
                b'/' if self.peek(1) == Some(b'/') => self.skip_line_comment(),
                b'#' if self.at_line_start => {
                    let text = self.read_directive()?;
                    let kind = omp_payload(&text)
                        .map(|p| TokKind::OmpPragma(p.to_string()))
                        .unwrap_or(TokKind::Directive);
                    out.push(Token {
                        kind,
                        line,
                        end_line: self.line,
                        column,
                    });
                    continue;
                }
                b'"' | b'\'' => {
                    self.skip_quoted(c)?;
                    out.push(Token {
                        kind: TokKind::Literal,
                        line,
                        end_line: self.line,
                        column,
                    });
                }
                c if c == b'_' || c.is_ascii_alphabetic() => {
                    let mut ident = String::new();
                    loop {
                        if self.skip_splice() {
                            continue;
                        }
                        match self.peek(0) {
                            Some(c) if c == b'_' || c.is_ascii_alphanumeric() => {
                                ident.push(c as char);
                                self.pos += 1;
                            }
                            _ => break,
                        }
                    }
                    // Prefixed literals: L"..", u8"..", U'..'
                    if matches!(self.peek(0), Some(b'"' | b'\'')) && matches!(ident.as_str(), "L" | "u" | "U" | "u8") {
                        let q = self.peek(0).unwrap();
                        self.skip_quoted(q)?;
                        out.push(Token {
                            kind: TokKind::Literal,
                            line,
                            end_line: self.line,
                            column,
                        });
                    } else {
                        out.push(Token {
                            kind: TokKind::Ident(ident),
                            line,
                            end_line: line,
                            column,
                        });
                    }
                }
                c if c.is_ascii_digit() || (c == b'.' && self.peek(1).is_some_and(|d| d.is_ascii_digit())) => {
                    // pp-number: digits, letters, '.', and exponent signs.
                    let mut prev = 0u8;
                    while let Some(d) = self.peek(0) {
                        let sign = (d == b'+' || d == b'-') && matches!(prev, b'e' | b'E' | b'p' | b'P');
                        if d.is_ascii_alphanumeric() || d == b'.' || d == b'_' || sign {
                            prev = d;
                            self.pos += 1;
                        } else {
                            break;
                        }
                    }
                    out.push(Token {
                        kind: TokKind::Literal,
                        line,
                        end_line: line,
                        column,
                    });
                }
                c => {
                    self.pos += 1;
                    // Non-ASCII bytes only occur in identifiers/comments we
                    // don't care about; treat as opaque punctuation.
                    out.push(Token {
                        kind: TokKind::Punct(c as char),
                        line,
                        end_line: line,
                        column,
                    });
                }
            }
            if c != b'\n' && !matches!(c, b' ' | b'\t' | b'\r' | b'\x0b' | b'\x0c') {
                self.at_line_start = false;
            }
        }
        Ok((out, self.continued))
    }
}

/// Returns the text after `pragma omp` for an OpenMP pragma directive line.
fn omp_payload(directive: &str) -> Option<&str> {
    let rest = directive.trim_start();
    let rest = rest.strip_prefix("pragma")?;
    if !rest.starts_with(|c: char| c.is_whitespace()) {
        return None;
    }
    let rest = rest.trim_start().strip_prefix("omp")?;
    if !rest.is_empty() && !rest.starts_with(|c: char| c.is_whitespace()) {
        return None;
    }
    Some(rest.trim())
}

fn directive_words(payload: &str) -> Vec<&str> {
    payload
        .split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
        .collect()
}

fn classify(payload: &str) -> Option<RegionKind> {
    let words = directive_words(payload);
    match words.as_slice() {
        ["parallel", "for", ..] => Some(RegionKind::ParallelFor),
        ["parallel", "sections", ..] => Some(RegionKind::ParallelSections),
        ["parallel", ..] => Some(RegionKind::ParallelBlock),
        ["single", ..] => Some(RegionKind::Single),
        ["task", ..] => Some(RegionKind::Task),
        _ => None,
    }
}

/// Directives that stand alone and do not own a following statement.
fn is_standalone(payload: &str) -> bool {
    let words = directive_words(payload);
    matches!(
        words.first().copied(),
        Some(
            "barrier"
                | "taskwait"
                | "taskyield"
                | "flush"
                | "threadprivate"
                | "cancel"
                | "cancellation"
                | "declare"
                | "requires"
                | "end"
        )
    ) || (words.first() == Some(&"ordered") && words.contains(&"depend"))
        || (words.first() == Some(&"target") && matches!(words.get(1).copied(), Some("update" | "enter" | "exit")))
}

struct Extents<'t> {
    toks: &'t [Token],
    /// For every opening bracket token, the index of its partner.
    partner: Vec<usize>,
}

impl<'t> Extents<'t> {
    fn skip_trivia(&self, mut i: usize) -> usize {
        while i < self.toks.len() && self.toks[i].kind == TokKind::Directive {
            i += 1;
        }
        i
    }

    /// Index of the last token of the statement starting at (or after
    /// preprocessor lines following) `i`. Returns `(first, last)`.
    fn statement(&self, i: usize) -> Option<(usize, usize)> {
        let i = self.skip_trivia(i);
        let tok = self.toks.get(i)?;
        match &tok.kind {
            TokKind::OmpPragma(p) => {
                if is_standalone(p) {
                    Some((i, i))
                } else {
                    let (_, last) = self.statement(i + 1)?;
                    Some((i, last))
                }
            }
            TokKind::Punct('{') => Some((i, self.partner[i])),
            TokKind::Punct('}') => None,
            TokKind::Punct(';') => Some((i, i)),
            TokKind::Ident(kw) => match kw.as_str() {
                "for" | "while" | "switch" => {
                    let open = i + 1;
                    if !self.toks.get(open)?.is_punct('(') {
                        return self.simple(i);
                    }
                    let (_, last) = self.statement(self.partner[open] + 1)?;
                    Some((i, last))
                }
                "if" => {
                    let open = i + 1;
                    if !self.toks.get(open)?.is_punct('(') {
                        return self.simple(i);
                    }
                    let (_, mut last) = self.statement(self.partner[open] + 1)?;
                    let next = self.skip_trivia(last + 1);
                    if self.toks.get(next).is_some_and(|t| t.is_ident("else")) {
                        last = self.statement(next + 1)?.1;
                    }
                    Some((i, last))
                }
                "do" => {
                    let (_, body_last) = self.statement(i + 1)?;
                    let w = self.skip_trivia(body_last + 1);
                    if !self.toks.get(w)?.is_ident("while") {
                        return None;
                    }
                    let open = w + 1;
                    if !self.toks.get(open)?.is_punct('(') {
                        return None;
                    }
                    let semi = self.partner[open] + 1;
                    if self.toks.get(semi)?.is_punct(';') {
                        Some((i, semi))
                    } else {
                        Some((i, self.partner[open]))
                    }
                }
                "else" => None,
                _ => self.simple(i),
            },
            _ => self.simple(i),
        }
    }

    /// Expression or declaration statement: runs to the next `;` outside
    /// any bracket.
    fn simple(&self, i: usize) -> Option<(usize, usize)> {
        let mut j = i;
        while j < self.toks.len() {
            match self.toks[j].kind {
                TokKind::Punct(';') => return Some((i, j)),
                TokKind::Punct('(' | '[' | '{') => j = self.partner[j] + 1,
                TokKind::Punct(')' | ']' | '}') => return None,
                TokKind::OmpPragma(_) => return None,
                _ => j += 1,
            }
        }
        None
    }
}

/// Matches all brackets. Braces must balance; unmatched parentheses or square
/// brackets are tolerated by pairing them with the end of input.
fn match_brackets(toks: &[Token], file: &str) -> Result<Vec<usize>, ScanError> {
    let mut partner = vec![usize::MAX; toks.len()];
    let mut stack: Vec<usize> = Vec::new();
    for (i, t) in toks.iter().enumerate() {
        match t.kind {
            TokKind::Punct('(' | '[' | '{') => stack.push(i),
            TokKind::Punct(c @ (')' | ']' | '}')) => {
                let want = match c {
                    ')' => '(',
                    ']' => '[',
                    _ => '{',
                };
                // Pop unmatched parens/brackets until we find the opener.
                loop {
                    let Some(&top) = stack.last() else {
                        if c == '}' {
                            return Err(ScanError::UnbalancedBraces {
                                file: file.to_string(),
                                line: t.line,
                                column: t.column,
                            });
                        }
                        break;
                    };
                    let top_c = match toks[top].kind {
                        TokKind::Punct(o) => o,
                        _ => unreachable!(),
                    };
                    if top_c == want {
                        stack.pop();
                        partner[top] = i;
                        partner[i] = top;
                        break;
                    }
                    if top_c == '{' {
                        // Stray ')' or ']' inside a brace block.
                        break;
                    }
                    // Open '(' or '[' without partner.
                    stack.pop();
                    partner[top] = toks.len() - 1;
                }
            }
            _ => {}
        }
    }
    for &open in &stack {
        if toks[open].is_punct('{') {
            return Err(ScanError::UnbalancedBraces {
                file: file.to_string(),
                line: toks[open].line,
                column: toks[open].column,
            });
        }
        partner[open] = toks.len() - 1;
    }
    Ok(partner)
}

/// Top-level function bodies: (name, open brace index, close brace index).
fn function_bodies(toks: &[Token], partner: &[usize]) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        if toks[i].is_punct('{') {
            let close = partner[i];
            if let Some(name) = function_name_before(toks, partner, i) {
                out.push((name, i, close));
            }
            i = close + 1;
        } else if toks[i].is_punct('(') || toks[i].is_punct('[') {
            i = partner[i].max(i) + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Recognizes `name ( ... ) {` immediately before the brace at `open`.
fn function_name_before(toks: &[Token], partner: &[usize], open: usize) -> Option<String> {
    let close_paren = open.checked_sub(1)?;
    if !toks[close_paren].is_punct(')') {
        return None;
    }
    let open_paren = partner[close_paren];
    let name_idx = open_paren.checked_sub(1)?;
    match &toks[name_idx].kind {
        TokKind::Ident(name) if !is_keyword(name) => Some(name.clone()),
        _ => None,
    }
}

fn is_keyword(s: &str) -> bool {
    matches!(
        s,
        "if" | "for" | "while" | "switch" | "return" | "sizeof" | "do" | "else" | "case"
    )
}

fn scan_with_base(source_text: &str, file: &str, first_id: RegionId) -> Result<Vec<Region>, ScanError> {
    let (toks, continued) = Lexer::new(source_text)
        .tokenize()
        .map_err(|line| ScanError::Unterminated {
            file: file.to_string(),
            line,
        })?;
    let partner = match_brackets(&toks, file)?;
    let functions = function_bodies(&toks, &partner);
    let ext = Extents { toks: &toks, partner };

    let mut regions = Vec::new();
    for (i, tok) in toks.iter().enumerate() {
        let TokKind::OmpPragma(payload) = &tok.kind else {
            continue;
        };
        let Some(kind) = classify(payload) else {
            continue;
        };
        let (first, last) = ext.statement(i + 1).ok_or_else(|| ScanError::PragmaWithoutStatement {
            file: file.to_string(),
            line: tok.line,
        })?;
        let function = functions
            .iter()
            .find(|(_, open, close)| *open < i && i < *close)
            .map(|(n, _, _)| n.clone())
            .unwrap_or_default();
        regions.push(Region {
            id: 0,
            kind,
            file: file.to_string(),
            pragma_line: tok.line,
            pragma_end_line: tok.end_line,
            block_begin: toks[first].line,
            block_end: toks[last].end_line,
            function,
            sole_statement: is_sole_statement(&toks, &ext.partner, i),
            has_num_threads: directive_words(payload).contains(&"num_threads"),
            block_end_shared: toks.get(last + 1).is_some_and(|t| t.line == toks[last].end_line)
                || continued.contains(&toks[last].end_line),
        });
    }
    for (n, r) in regions.iter_mut().enumerate() {
        r.id = first_id + n as RegionId;
    }
    Ok(regions)
}

/// A pragma at token `i` is a sole statement when the token before it is a
/// construct that expects exactly one statement: another (non-standalone)
/// OpenMP pragma, `)` closing a control header, `else` or `do`.
fn is_sole_statement(toks: &[Token], partner: &[usize], i: usize) -> bool {
    let mut j = i;
    while j > 0 {
        j -= 1;
        match &toks[j].kind {
            TokKind::Directive => continue,
            TokKind::OmpPragma(p) => return !is_standalone(p),
            TokKind::Ident(k) => return k == "else" || k == "do",
            TokKind::Punct(')') => {
                let open = partner[j];
                return open > 0
                    && open != usize::MAX
                    && matches!(&toks[open - 1].kind,
                        TokKind::Ident(k) if matches!(k.as_str(), "if" | "for" | "while" | "switch"));
            }
            _ => return false,
        }
    }
    false
}

/// Finds every `parallel`, `single` and `task` construct in one file.
/// Ids start at 0 and follow pragma order.
pub fn scan_source(source_text: &str, file: &str) -> Result<Vec<Region>, ScanError> {
    scan_with_base(source_text, file, 0)
}

/// Scans several files, numbering regions across them in ascending
/// `(file, pragma_line)` order.
pub fn scan_sources<'a, I>(sources: I) -> Result<Vec<Region>, ScanError>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut files: Vec<(&str, &str)> = sources.into_iter().collect();
    files.sort_by(|a, b| a.0.cmp(b.0));
    let mut out = Vec::new();
    for (file, text) in files {
        let next = out.len() as RegionId;
        out.extend(scan_with_base(text, file, next)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionEntry {
    pub function: String,
    pub file: Option<String>,
    pub line_range: Option<(usize, usize)>,
}

impl SelectionEntry {
    pub fn matches(&self, region: &Region) -> bool {
        if self.function != region.function {
            return false;
        }
        if let Some(file) = &self.file {
            if basename(file) != region.file_name() {
                return false;
            }
        }
        match self.line_range {
            Some((start, end)) => (start..=end).contains(&region.pragma_line),
            None => true,
        }
    }
}

/// Parsed region-selection config. No entries means every region is selected.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InstrumentationConfig {
    pub entries: Vec<SelectionEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: malformed range `{token}` (expected START-END with START <= END)")]
    MalformedRange { line: usize, token: String },
    #[error("line {line}: unexpected extra field `{token}`")]
    ExtraField { line: usize, token: String },
}

/// Parses the `function [file [start-end]]` config format. Text after `#`
/// on a line is a comment.
pub fn parse_config(text: &str) -> Result<InstrumentationConfig, ConfigError> {
    let mut entries = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("");
        let mut fields = line.split_whitespace();
        let Some(function) = fields.next() else {
            continue;
        };
        let file = fields.next().map(str::to_string);
        let line_range = match fields.next() {
            None => None,
            Some(tok) => Some(parse_range(tok).ok_or_else(|| ConfigError::MalformedRange {
                line: line_no,
                token: tok.to_string(),
            })?),
        };
        if let Some(extra) = fields.next() {
            return Err(ConfigError::ExtraField {
                line: line_no,
                token: extra.to_string(),
            });
        }
        entries.push(SelectionEntry {
            function: function.to_string(),
            file,
            line_range,
        });
    }
    Ok(InstrumentationConfig { entries })
}

fn parse_range(tok: &str) -> Option<(usize, usize)> {
    let (a, b) = tok.split_once('-')?;
    let start: usize = a.parse().ok()?;
    let end: usize = b.parse().ok()?;
    (start <= end).then_some((start, end))
}

/// Result of applying a config: the chosen regions plus entries that
/// matched nothing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub regions: Vec<Region>,
    pub unmatched: Vec<SelectionEntry>,
}

pub fn select_regions(regions: &[Region], config: &InstrumentationConfig) -> Selection {
    if config.entries.is_empty() {
        return Selection {
            regions: regions.to_vec(),
            unmatched: Vec::new(),
        };
    }
    let mut picked: Vec<Region> = regions
        .iter()
        .filter(|r| config.entries.iter().any(|e| e.matches(r)))
        .cloned()
        .collect();
    picked.sort_by_key(|r| r.id);
    picked.dedup_by_key(|r| r.id);
    let unmatched = config
        .entries
        .iter()
        .filter(|e| !regions.iter().any(|r| e.matches(r)))
        .cloned()
        .collect();
    Selection {
        regions: picked,
        unmatched,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_block_extent() {
        let src = "int main(void)\n{\n  int x = 0;\n#pragma omp parallel\n  {\n    x++;\n\n\n  }\n  return x;\n}\n";
        let regions = scan_source(src, "a.c").unwrap();
        assert_eq!(regions.len(), 1);
        let r = &regions[0];
        assert_eq!(r.kind, RegionKind::ParallelBlock);
        assert_eq!((r.pragma_line, r.block_begin, r.block_end), (4, 5, 9));
        assert_eq!(r.function, "main");
        assert!(!r.sole_statement);
    }

    #[test]
    fn parallel_for_single_statement_body() {
        let src =
            "void f(int *a, int n) {\n  #pragma omp parallel for\n  for (int i = 0; i < n; i++)\n    a[i] = i;\n}\n";
        let r = &scan_source(src, "f.c").unwrap()[0];
        assert_eq!(r.kind, RegionKind::ParallelFor);
        assert_eq!((r.pragma_line, r.block_begin, r.block_end), (2, 3, 4));
        assert_eq!(r.function, "f");
    }

    #[test]
    fn kinds_and_ignored_directives() {
        let src = "void g(void) {\n#pragma omp parallel sections\n{\n#pragma omp section\nwork();\n}\n#pragma omp single\nwork();\n#pragma omp task\nwork();\n#pragma omp taskwait\n#pragma omp barrier\n#pragma omp for\nfor(;;) break;\n}\n";
        let kinds: Vec<_> = scan_source(src, "g.c").unwrap().into_iter().map(|r| r.kind).collect();
        assert_eq!(
            kinds,
            vec![RegionKind::ParallelSections, RegionKind::Single, RegionKind::Task]
        );
    }

    #[test]
    fn continuation_lines() {
        let src = "void h(void) {\n#pragma omp parallel \\\n    shared(x) \\\n    private(y)\n{ y = x; }\n}\n";
        let r = &scan_source(src, "h.c").unwrap()[0];
        assert_eq!(
            (r.pragma_line, r.pragma_end_line, r.block_begin, r.block_end),
            (2, 4, 5, 5)
        );
    }

    #[test]
    fn ignores_pragmas_in_comments_and_strings() {
        let src = "/* #pragma omp parallel */\n// #pragma omp parallel\nconst char *s = \"#pragma omp parallel\";\nint main(void){ return 0; }\n";
        assert!(scan_source(src, "c.c").unwrap().is_empty());
    }

    #[test]
    fn nested_and_sole_statement() {
        let src = "void n(void) {\n#pragma omp parallel\n#pragma omp single\n{\n  for (int i = 0; i < 4; i++)\n#pragma omp task\n    go(i);\n}\n}\n";
        let rs = scan_source(src, "n.c").unwrap();
        assert_eq!(rs.len(), 3);
        assert_eq!((rs[0].block_begin, rs[0].block_end), (3, 8));
        assert_eq!((rs[1].block_begin, rs[1].block_end), (4, 8));
        assert_eq!((rs[2].block_begin, rs[2].block_end), (7, 7));
        assert!(!rs[0].sole_statement);
        assert!(rs[1].sole_statement);
        assert!(rs[2].sole_statement);
    }

    #[test]
    fn if_else_and_do_while_bodies() {
        let src = "void k(int c) {\n#pragma omp parallel\nif (c)\n  a();\nelse {\n  b();\n}\n#pragma omp task\ndo {\n x();\n} while (c);\n}\n";
        let rs = scan_source(src, "k.c").unwrap();
        assert_eq!((rs[0].block_begin, rs[0].block_end), (3, 7));
        assert_eq!((rs[1].block_begin, rs[1].block_end), (9, 11));
    }

    #[test]
    fn unbalanced_braces_reported() {
        let err = scan_source("int main(void) {\n  {\n}\n", "u.c").unwrap_err();
        assert!(matches!(err, ScanError::UnbalancedBraces { line: 1, .. }), "{err:?}");
        let err = scan_source("int main(void) {\n}\n}\n", "u.c").unwrap_err();
        assert!(
            matches!(err, ScanError::UnbalancedBraces { line: 3, column: 1, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn pragma_at_end_of_file() {
        let err = scan_source("int x;\n#pragma omp parallel\n", "e.c").unwrap_err();
        assert_eq!(
            err,
            ScanError::PragmaWithoutStatement {
                file: "e.c".into(),
                line: 2
            }
        );
    }

    #[test]
    fn multi_file_ids_follow_file_order() {
        let a = "void fa(void){\n#pragma omp parallel\n{}\n}\n";
        let b = "void fb(void){\n#pragma omp single\n;\n#pragma omp task\n;\n}\n";
        let rs = scan_sources([("b.c", b), ("a.c", a)]).unwrap();
        let ids: Vec<_> = rs.iter().map(|r| (r.id, r.file.as_str(), r.pragma_line)).collect();
        assert_eq!(ids, vec![(0, "a.c", 2), (1, "b.c", 2), (2, "b.c", 4)]);
    }

    #[test]
    fn config_examples() {
        let c = parse_config("fib").unwrap();
        assert_eq!(
            c.entries,
            vec![SelectionEntry {
                function: "fib".into(),
                file: None,
                line_range: None
            }]
        );
        let c = parse_config("lu0 sparselu.c 40-90").unwrap();
        assert_eq!(
            c.entries,
            vec![SelectionEntry {
                function: "lu0".into(),
                file: Some("sparselu.c".into()),
                line_range: Some((40, 90))
            }]
        );
        assert!(matches!(
            parse_config("f a.c 9-3"),
            Err(ConfigError::MalformedRange { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("f a.c 9"),
            Err(ConfigError::MalformedRange { .. })
        ));
        let c = parse_config("# header\n\n   \nfib # trailing\n").unwrap();
        assert_eq!(c.entries.len(), 1);
        assert!(parse_config("").unwrap().entries.is_empty());
    }

    fn region(id: RegionId, function: &str, file: &str, line: usize) -> Region {
        Region {
            id,
            kind: RegionKind::ParallelBlock,
            file: file.into(),
            pragma_line: line,
            pragma_end_line: line,
            block_begin: line + 1,
            block_end: line + 2,
            function: function.into(),
            sole_statement: false,
            has_num_threads: false,
            block_end_shared: false,
        }
    }

    #[test]
    fn selection_rules() {
        let rs = vec![
            region(0, "fib", "src/fib.c", 10),
            region(1, "main", "src/fib.c", 30),
            region(2, "fib", "src/fib.c", 20),
        ];
        assert_eq!(select_regions(&rs, &InstrumentationConfig::default()).regions, rs);

        let cfg = parse_config("fib").unwrap();
        let sel = select_regions(&rs, &cfg);
        assert_eq!(sel.regions.iter().map(|r| r.id).collect::<Vec<_>>(), vec![0, 2]);

        let lu = vec![region(0, "lu0", "/tmp/sparselu.c", 50)];
        let sel = select_regions(&lu, &parse_config("lu0 sparselu.c 40-45").unwrap());
        assert!(sel.regions.is_empty());
        assert_eq!(sel.unmatched.len(), 1);

        let sel = select_regions(&lu, &parse_config("lu0 other/sparselu.c 40-55\nlu0").unwrap());
        assert_eq!(sel.regions.len(), 1);
    }
}
