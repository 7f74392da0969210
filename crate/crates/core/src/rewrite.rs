//! Source-to-source instrumentation: hook insertion, stripping, and the
//! region manifest.
//!
//! Every line the rewriter adds or modifies carries the marker comment, so
//! [`strip`] can undo an instrumentation pass with no side table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scan::{scan_source, Region, RegionId, RegionKind, ScanError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstrumentationOptions {
    pub inject_thread_clause: bool,
    /// Tag placed in a comment on every inserted or modified line.
    pub marker_comment: String,
    /// Prefix of the hook functions, e.g. `pdt` for `pdt_region_begin`.
    pub hook_prefix: String,
}

impl Default for InstrumentationOptions {
    fn default() -> Self {
        InstrumentationOptions {
            inject_thread_clause: true,
            marker_comment: "@pdttagger".to_string(),
            hook_prefix: "pdt".to_string(),
        }
    }
}

impl InstrumentationOptions {
    /// Name of the header declaring the hooks.
    pub fn header_name(&self) -> String {
        format!("{}_hooks.h", self.hook_prefix)
    }

    fn inserted_suffix(&self) -> String {
        format!(" /* {} */", self.marker_comment)
    }

    fn modified_suffix(&self) -> String {
        format!(" /* {} +clause */", self.marker_comment)
    }

    fn thread_clause(&self, id: RegionId) -> String {
        format!(" num_threads({}_region_threads({id}))", self.hook_prefix)
    }

    /// C declarations of the hook interface, written next to instrumented
    /// sources.
    pub fn hook_header(&self) -> String {
        let p = &self.hook_prefix;
        let guard = format!("{}_HOOKS_H", p.to_ascii_uppercase());
        format!(
            "#ifndef {guard}\n#define {guard}\n\n#ifdef __cplusplus\nextern \"C\" {{\n#endif\n\n\
             void {p}_region_begin(int id);\nvoid {p}_region_end(int id);\nint {p}_region_threads(int id);\n\n\
             #ifdef __cplusplus\n}}\n#endif\n\n#endif\n"
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: RegionId,
    pub kind: RegionKind,
    pub file: String,
    pub function: String,
    pub pragma_line: usize,
    pub block_begin: usize,
    pub block_end: usize,
}

impl From<&Region> for ManifestEntry {
    fn from(r: &Region) -> Self {
        ManifestEntry {
            id: r.id,
            kind: r.kind,
            file: r.file.clone(),
            function: r.function.clone(),
            pragma_line: r.pragma_line,
            block_begin: r.block_begin,
            block_end: r.block_end,
        }
    }
}

/// Instrumented regions with their positions in the original sources.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RegionManifest {
    pub entries: Vec<ManifestEntry>,
    /// Hex SHA-256 of the original source (see [`source_digest`]).
    pub source_digest: String,
}

impl RegionManifest {
    pub fn get(&self, id: RegionId) -> Option<&ManifestEntry> {
        self.entries
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|i| &self.entries[i])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewriteError {
    #[error("source is already instrumented (marker `{marker}` found on line {line})")]
    AlreadyInstrumented { marker: String, line: usize },
    #[error("region {id} (pragma line {line}) no longer matches the source")]
    RegionNotFound { id: RegionId, line: usize },
    #[error("region {id}: line {line} holds code after the block; cannot place the end hook")]
    SharedLine { id: RegionId, line: usize },
    #[error(transparent)]
    Scan(#[from] ScanError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ManifestError {
    #[error("manifest line {line}: {message}")]
    ManifestSyntax { line: usize, message: String },
    #[error("source digest mismatch: manifest has {expected}, sources hash to {actual}")]
    DigestMismatch { expected: String, actual: String },
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest over one or more original sources. A single source hashes to the
/// SHA-256 of its bytes; several are combined by name in sorted order.
pub fn source_digest(sources: &[(&str, &str)]) -> String {
    if let [(_, text)] = sources {
        return sha256_hex(text.as_bytes());
    }
    let mut sorted: Vec<_> = sources.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    let mut combined = String::new();
    for (name, text) in sorted {
        let _ = writeln!(combined, "{name}\0{}", sha256_hex(text.as_bytes()));
    }
    sha256_hex(combined.as_bytes())
}

/// Splits text into lines, each keeping its terminator.
fn split_lines(text: &str) -> Vec<&str> {
    text.split_inclusive('\n').collect()
}

fn split_terminator(line: &str) -> (&str, &str) {
    if let Some(body) = line.strip_suffix("\r\n") {
        (body, "\r\n")
    } else if let Some(body) = line.strip_suffix('\n') {
        (body, "\n")
    } else {
        (line, "")
    }
}

fn indentation(line: &str) -> &str {
    let body = split_terminator(line).0;
    &body[..body.len() - body.trim_start().len()]
}

/// Byte offset at which a clause can be appended to the final line of a
/// directive: after the last code character, before any trailing comment.
fn clause_insert_offset(body: &str) -> usize {
    let bytes = body.as_bytes();
    // The line may open inside a comment carried over from a previous line.
    let mut i = match (body.find("*/"), body.find("/*")) {
        (Some(close), open) if open.is_none_or(|o| close < o) => close + 2,
        _ => 0,
    };
    let mut code_end = i;
    let mut in_block = false;
    let mut quote: Option<u8> = None;
    while i < bytes.len() {
        let c = bytes[i];
        if in_block {
            if c == b'*' && bytes.get(i + 1) == Some(&b'/') {
                in_block = false;
                i += 2;
                continue;
            }
        } else if let Some(q) = quote {
            if c == b'\\' {
                i += 2;
                continue;
            }
            if c == q {
                quote = None;
            }
            code_end = i + 1;
        } else if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            break;
        } else if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            in_block = true;
            i += 2;
            continue;
        } else if c == b'"' || c == b'\'' {
            quote = Some(c);
            code_end = i + 1;
        } else if !c.is_ascii_whitespace() {
            code_end = i + 1;
        }
        i += 1;
    }
    code_end
}

/// Inserts begin/end hooks (and optionally `num_threads` clauses) around the
/// selected regions of one file.
///
/// Returns the instrumented text and a manifest carrying the original line
/// numbers of every selected region.
pub fn instrument(
    source_text: &str,
    selected: &[Region],
    opts: &InstrumentationOptions,
) -> Result<(String, RegionManifest), RewriteError> {
    if let Some(line) = find_marker(source_text, &opts.marker_comment) {
        return Err(RewriteError::AlreadyInstrumented {
            marker: opts.marker_comment.clone(),
            line,
        });
    }
    // Re-scan so extents and layout flags come from this exact text.
    let fresh = match selected.first() {
        Some(r) => scan_source(source_text, &r.file)?,
        None => Vec::new(),
    };
    let mut regions: Vec<&Region> = Vec::with_capacity(selected.len());
    for sel in selected {
        let found = fresh.iter().find(|r| {
            r.pragma_line == sel.pragma_line
                && r.kind == sel.kind
                && r.block_begin == sel.block_begin
                && r.block_end == sel.block_end
        });
        match found {
            Some(r) if r.block_end_shared => {
                return Err(RewriteError::SharedLine {
                    id: sel.id,
                    line: r.block_end,
                })
            }
            Some(r) => regions.push(r),
            None => {
                return Err(RewriteError::RegionNotFound {
                    id: sel.id,
                    line: sel.pragma_line,
                })
            }
        }
    }

    let nl = if source_text.contains("\r\n") { "\r\n" } else { "\n" };
    let ins = opts.inserted_suffix();
    let p = &opts.hook_prefix;

    // Keyed by original 1-based line.
    let mut before: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut after: BTreeMap<usize, Vec<(usize, String)>> = BTreeMap::new();
    let mut clause: BTreeMap<usize, RegionId> = BTreeMap::new();
    let lines = split_lines(source_text);

    for (sel, r) in selected.iter().zip(&regions) {
        let id = sel.id;
        let indent = lines.get(r.pragma_line - 1).map_or("", |l| indentation(l));
        let (open, close) = if r.sole_statement { ("{ ", " }") } else { ("", "") };
        before
            .entry(r.pragma_line)
            .or_default()
            .push(format!("{indent}{open}{p}_region_begin({id});{ins}"));
        after
            .entry(r.block_end)
            .or_default()
            .push((r.pragma_line, format!("{indent}{p}_region_end({id});{close}{ins}")));
        if opts.inject_thread_clause && r.kind.is_parallel() && !r.has_num_threads {
            clause.insert(r.pragma_end_line, id);
        }
    }

    let mut out = String::with_capacity(source_text.len() + 64 * (selected.len() + 1));
    // Always present, so instrumented output is recognizable even without regions.
    let _ = write!(out, "#include \"{}\"{ins}{nl}", opts.header_name());
    let last = lines.len();
    for (idx, line) in lines.iter().enumerate() {
        let n = idx + 1;
        if let Some(hooks) = before.get(&n) {
            for h in hooks {
                out.push_str(h);
                out.push_str(nl);
            }
        }
        let (body, term) = split_terminator(line);
        let ends = after.get_mut(&n);
        // A final line without terminator gains one when hooks follow it.
        let term = if term.is_empty() && n == last && ends.is_some() {
            nl
        } else {
            term
        };
        match clause.get(&n) {
            Some(&id) => {
                let at = clause_insert_offset(body);
                out.push_str(&body[..at]);
                out.push_str(&opts.thread_clause(id));
                out.push_str(&body[at..]);
                out.push_str(&opts.modified_suffix());
            }
            None => out.push_str(body),
        }
        out.push_str(term);
        if let Some(ends) = ends {
            // Innermost (latest pragma) closes first.
            ends.sort_by_key(|e| std::cmp::Reverse(e.0));
            let count = ends.len();
            for (k, (_, h)) in ends.iter().enumerate() {
                out.push_str(h);
                let terminal = n == last && k + 1 == count && split_terminator(line).1.is_empty();
                if !terminal {
                    out.push_str(nl);
                }
            }
        }
    }

    let mut entries: Vec<ManifestEntry> = selected
        .iter()
        .zip(&regions)
        .map(|(sel, r)| ManifestEntry {
            id: sel.id,
            file: sel.file.clone(),
            ..ManifestEntry::from(*r)
        })
        .collect();
    entries.sort_by_key(|e| e.id);
    let manifest = RegionManifest {
        entries,
        source_digest: sha256_hex(source_text.as_bytes()),
    };
    Ok((out, manifest))
}

fn find_marker(text: &str, marker: &str) -> Option<usize> {
    text.lines().position(|l| l.contains(marker)).map(|i| i + 1)
}

/// Removes everything [`instrument`] added. Marker-tagged lines are dropped,
/// except modified pragma lines, which get their clause and tag removed.
pub fn strip(instrumented_text: &str, opts: &InstrumentationOptions) -> String {
    let modified = opts.modified_suffix();
    let clause_head = format!(" num_threads({}_region_threads(", opts.hook_prefix);
    let mut out = String::with_capacity(instrumented_text.len());
    let mut dropped_unterminated_tail = false;
    let lines = split_lines(instrumented_text);
    for (idx, line) in lines.iter().enumerate() {
        let (body, term) = split_terminator(line);
        if !body.contains(&opts.marker_comment) {
            out.push_str(line);
            continue;
        }
        if let Some(rest) = body.strip_suffix(&modified) {
            out.push_str(&remove_clause(rest, &clause_head));
            out.push_str(term);
            continue;
        }
        if idx + 1 == lines.len() && term.is_empty() {
            dropped_unterminated_tail = true;
        }
    }
    if dropped_unterminated_tail {
        if out.ends_with("\r\n") {
            out.truncate(out.len() - 2);
        } else if out.ends_with('\n') {
            out.truncate(out.len() - 1);
        }
    }
    out
}

fn remove_clause(line: &str, clause_head: &str) -> String {
    let Some(start) = line.find(clause_head) else {
        return line.to_string();
    };
    let after = &line[start + clause_head.len()..];
    let digits = after.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 && after[digits..].starts_with("))") {
        let end = start + clause_head.len() + digits + 2;
        format!("{}{}", &line[..start], &line[end..])
    } else {
        line.to_string()
    }
}

/// Renders the manifest file: a header line followed by one tab-separated
/// line per region in id order.
pub fn emit_manifest(manifest: &RegionManifest) -> String {
    let mut out = format!("pdtmanifest v1 {}\n", manifest.source_digest);
    let mut entries: Vec<&ManifestEntry> = manifest.entries.iter().collect();
    entries.sort_by_key(|e| e.id);
    for e in entries {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.id, e.kind, e.file, e.function, e.pragma_line, e.block_begin, e.block_end
        );
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<RegionManifest, ManifestError> {
    let syntax = |line: usize, message: String| ManifestError::ManifestSyntax { line, message };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| syntax(1, "empty manifest".into()))?;
    let digest = match header.split(' ').collect::<Vec<_>>().as_slice() {
        ["pdtmanifest", "v1", d] if !d.is_empty() && d.bytes().all(|b| b.is_ascii_hexdigit()) => d.to_string(),
        _ => return Err(syntax(1, format!("bad header `{header}`"))),
    };
    let mut entries: Vec<ManifestEntry> = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(syntax(n, format!("expected 7 tab-separated fields, got {}", f.len())));
        }
        let num = |s: &str, what: &str| -> Result<usize, ManifestError> {
            s.parse().map_err(|_| syntax(n, format!("bad {what} `{s}`")))
        };
        let entry = ManifestEntry {
            id: num(f[0], "id")? as RegionId,
            kind: f[1].parse().map_err(|e: String| syntax(n, e))?,
            file: f[2].to_string(),
            function: f[3].to_string(),
            pragma_line: num(f[4], "pragma line")?,
            block_begin: num(f[5], "block begin")?,
            block_end: num(f[6], "block end")?,
        };
        if entries.last().is_some_and(|prev| prev.id >= entry.id) {
            return Err(syntax(n, "ids must be strictly ascending".into()));
        }
        entries.push(entry);
    }
    Ok(RegionManifest {
        entries,
        source_digest: digest,
    })
}

/// Checks that `sources` are the files the manifest was produced from.
pub fn verify_manifest(manifest: &RegionManifest, sources: &[(&str, &str)]) -> Result<(), ManifestError> {
    let actual = source_digest(sources);
    if actual == manifest.source_digest {
        Ok(())
    } else {
        Err(ManifestError::DigestMismatch {
            expected: manifest.source_digest.clone(),
            actual,
        })
    }
}
