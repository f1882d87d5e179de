//! Token-level Levenshtein edit scripts.
//!
//! A script assigns one [`OpTag`] to every source token plus a leading
//! sentinel position (index 0). Insertions attach to the token preceding
//! them; a document-initial insertion attaches to the sentinel. Replacement
//! runs carry a single content sequence, which also absorbs insertions
//! adjacent to the run on either side.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpTag {
    Keep,
    Delete,
    Replace,
    Insert,
}

impl OpTag {
    pub const ALL: [OpTag; 4] = [OpTag::Keep, OpTag::Delete, OpTag::Replace, OpTag::Insert];

    pub fn index(self) -> usize {
        match self {
            OpTag::Keep => 0,
            OpTag::Delete => 1,
            OpTag::Replace => 2,
            OpTag::Insert => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<OpTag> {
        OpTag::ALL.get(i).copied()
    }

    pub fn as_char(self) -> char {
        match self {
            OpTag::Keep => 'K',
            OpTag::Delete => 'D',
            OpTag::Replace => 'R',
            OpTag::Insert => 'I',
        }
    }

    pub fn from_char(c: char) -> Option<OpTag> {
        match c {
            'K' => Some(OpTag::Keep),
            'D' => Some(OpTag::Delete),
            'R' => Some(OpTag::Replace),
            'I' => Some(OpTag::Insert),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OpTag::Keep => "KEEP",
            OpTag::Delete => "DELETE",
            OpTag::Replace => "REPLACE",
            OpTag::Insert => "INSERT",
        }
    }

    /// Whether spans of this type carry generated content.
    pub fn generates(self) -> bool {
        matches!(self, OpTag::Replace | OpTag::Insert)
    }
}

impl fmt::Display for OpTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditScript {
    /// One tag per source token, preceded by the sentinel tag at index 0.
    pub tags: Vec<OpTag>,
    /// Inserted content keyed by the position it follows.
    pub insertions: BTreeMap<usize, Vec<TokenId>>,
    /// Replacement content keyed by the first position of its REPLACE run.
    pub replacements: BTreeMap<usize, Vec<TokenId>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditSpan {
    pub start: usize,
    pub end: usize,
    pub op: OpTag,
    pub content: Vec<TokenId>,
}

impl EditSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Match,
    Substitute(TokenId),
    Delete,
    Insert(TokenId),
}

/// Unit-cost Levenshtein alignment of `src` onto `tgt`.
///
/// Backtrace ties resolve match, then substitution, then deletion, then
/// insertion, so the script is a pure function of its inputs.
pub fn diff(src: &[TokenId], tgt: &[TokenId]) -> EditScript {
    let ops = align(src, tgt);
    build_script(src.len(), &ops)
}

fn align(src: &[TokenId], tgt: &[TokenId]) -> Vec<Step> {
    let n = src.len();
    let m = tgt.len();
    let w = m + 1;
    let mut d = vec![0u32; (n + 1) * w];
    for j in 0..=m {
        d[j] = j as u32;
    }
    for i in 1..=n {
        d[i * w] = i as u32;
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + u32::from(src[i - 1] != tgt[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let diag = d[(i - 1) * w + j - 1];
            if src[i - 1] == tgt[j - 1] && here == diag {
                ops.push(Step::Match);
                i -= 1;
                j -= 1;
                continue;
            }
            if here == diag + 1 && src[i - 1] != tgt[j - 1] {
                ops.push(Step::Substitute(tgt[j - 1]));
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            ops.push(Step::Delete);
            i -= 1;
        } else {
            ops.push(Step::Insert(tgt[j - 1]));
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

fn build_script(n: usize, ops: &[Step]) -> EditScript {
    let mut tags = vec![OpTag::Keep; n + 1];
    let mut insertions: BTreeMap<usize, Vec<TokenId>> = BTreeMap::new();
    let mut replacements: BTreeMap<usize, Vec<TokenId>> = BTreeMap::new();
    // Position of the most recently consumed source token (0 = sentinel).
    let mut cur = 0usize;
    // Start of the replacement run still open for appends.
    let mut run: Option<usize> = None;

    for &op in ops {
        match op {
            Step::Match => {
                cur += 1;
                tags[cur] = OpTag::Keep;
                run = None;
            }
            Step::Delete => {
                cur += 1;
                tags[cur] = OpTag::Delete;
                run = None;
            }
            Step::Substitute(t) => {
                // Insertions directly before a new run move into its content.
                let carried = match run {
                    None if tags[cur] == OpTag::Insert => {
                        tags[cur] = OpTag::Keep;
                        insertions.remove(&cur).unwrap_or_default()
                    }
                    _ => Vec::new(),
                };
                cur += 1;
                tags[cur] = OpTag::Replace;
                let start = *run.get_or_insert(cur);
                let content = replacements.entry(start).or_default();
                content.extend(carried);
                content.push(t);
            }
            Step::Insert(t) => {
                if let Some(start) = run {
                    replacements.entry(start).or_default().push(t);
                } else if tags[cur] == OpTag::Delete {
                    // Never produced by a minimal alignment; kept total anyway.
                    tags[cur] = OpTag::Replace;
                    run = Some(cur);
                    replacements.entry(cur).or_default().push(t);
                } else {
                    tags[cur] = OpTag::Insert;
                    insertions.entry(cur).or_default().push(t);
                }
            }
        }
    }

    EditScript {
        tags,
        insertions,
        replacements,
    }
}

impl EditScript {
    /// The all-KEEP script for a source of `n` tokens.
    pub fn identity(n: usize) -> Self {
        EditScript {
            tags: vec![OpTag::Keep; n + 1],
            ..Default::default()
        }
    }

    pub fn source_len(&self) -> usize {
        self.tags.len().saturating_sub(1)
    }

    pub fn is_identity(&self) -> bool {
        self.tags.iter().all(|&t| t == OpTag::Keep)
    }

    pub fn tag_string(&self) -> String {
        self.tags.iter().map(|t| t.as_char()).collect()
    }

    /// Edit cost: deletions, plus inserted tokens, plus `max(m, k)` for each
    /// replacement of an `m`-token run by `k` tokens.
    pub fn cost(&self) -> usize {
        let deletes = self.tags.iter().filter(|&&t| t == OpTag::Delete).count();
        let inserted: usize = self.insertions.values().map(Vec::len).sum();
        let replaced: usize = self
            .replace_runs()
            .map(|(start, end)| {
                let k = self.replacements.get(&start).map_or(0, Vec::len);
                (end - start).max(k)
            })
            .sum();
        deletes + inserted + replaced
    }

    fn replace_runs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let tags = &self.tags;
        let mut pos = 0;
        std::iter::from_fn(move || {
            while pos < tags.len() && tags[pos] != OpTag::Replace {
                pos += 1;
            }
            if pos >= tags.len() {
                return None;
            }
            let start = pos;
            while pos < tags.len() && tags[pos] == OpTag::Replace {
                pos += 1;
            }
            Some((start, pos))
        })
    }

    /// Structural validity against a source of `src_len` tokens.
    pub fn validate(&self, src_len: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScript(msg));
        if self.tags.len() != src_len + 1 {
            return bad(format!(
                "{} tags for a source of {} tokens (expected {})",
                self.tags.len(),
                src_len,
                src_len + 1
            ));
        }
        if !matches!(self.tags[0], OpTag::Keep | OpTag::Insert) {
            return bad(format!("sentinel tagged {}", self.tags[0]));
        }
        for (pos, tag) in self.tags.iter().enumerate() {
            if *tag == OpTag::Insert && self.insertions.get(&pos).is_none_or(Vec::is_empty) {
                return bad(format!("INSERT at {pos} without content"));
            }
        }
        for &pos in self.insertions.keys() {
            if self.tags.get(pos) != Some(&OpTag::Insert) {
                return bad(format!("insertion content at {pos} not tagged INSERT"));
            }
        }
        let mut starts = 0;
        for (start, _) in self.replace_runs() {
            starts += 1;
            if self.replacements.get(&start).is_none_or(Vec::is_empty) {
                return bad(format!("REPLACE run at {start} without content"));
            }
        }
        if starts != self.replacements.len() {
            return bad("replacement content not keyed by a REPLACE run start".into());
        }
        Ok(())
    }

    /// Maximal same-tag runs in positional order. INSERT positions each form
    /// their own span since every one carries separate content.
    pub fn spans(&self) -> Vec<EditSpan> {
        extract_spans(self)
    }
}

/// Realize `script` on `src`.
pub fn apply(src: &[TokenId], script: &EditScript) -> Result<Vec<TokenId>> {
    script.validate(src.len())?;
    let mut out = Vec::with_capacity(src.len() + 8);
    for (pos, &tag) in script.tags.iter().enumerate() {
        let token = pos.checked_sub(1).map(|i| src[i]);
        match tag {
            OpTag::Keep => out.extend(token),
            OpTag::Delete => {}
            OpTag::Insert => {
                out.extend(token);
                out.extend_from_slice(&script.insertions[&pos]);
            }
            OpTag::Replace => {
                if let Some(content) = script.replacements.get(&pos) {
                    out.extend_from_slice(content);
                }
            }
        }
    }
    Ok(out)
}

pub fn extract_spans(script: &EditScript) -> Vec<EditSpan> {
    let tags = &script.tags;
    let mut spans = Vec::new();
    let mut pos = 0;
    while pos < tags.len() {
        let op = tags[pos];
        let start = pos;
        pos += 1;
        if op != OpTag::Insert {
            while pos < tags.len() && tags[pos] == op {
                pos += 1;
            }
        }
        let content = match op {
            OpTag::Insert => script.insertions.get(&start).cloned().unwrap_or_default(),
            OpTag::Replace => script.replacements.get(&start).cloned().unwrap_or_default(),
            _ => Vec::new(),
        };
        spans.push(EditSpan {
            start,
            end: pos,
            op,
            content,
        });
    }
    spans
}

/// Line-oriented text form used by the precomputed store:
///
/// ```text
/// T KKIRRD
/// I 2 17 4
/// R 3 9
/// ```
///
/// `T` carries the tag string, `I <pos> <ids..>` one insertion and
/// `R <start> <ids..>` one replacement run.
pub fn to_text(script: &EditScript) -> String {
    let mut s = String::with_capacity(script.tags.len() + 16);
    s.push_str("T ");
    s.push_str(&script.tag_string());
    s.push('\n');
    for (kind, map) in [('I', &script.insertions), ('R', &script.replacements)] {
        for (pos, ids) in map {
            s.push(kind);
            s.push(' ');
            s.push_str(&pos.to_string());
            for id in ids {
                s.push(' ');
                s.push_str(&id.to_string());
            }
            s.push('\n');
        }
    }
    s
}

pub fn from_text(text: &str) -> Result<EditScript> {
    let err = |line: usize, msg: &str| Error::ScriptParse {
        line,
        msg: msg.to_string(),
    };
    let mut script = EditScript::default();
    let mut seen_tags = false;
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        match parts.next() {
            Some("T") => {
                let tags = parts.next().ok_or_else(|| err(lineno, "missing tag string"))?;
                script.tags = tags
                    .chars()
                    .map(|c| OpTag::from_char(c).ok_or_else(|| err(lineno, "unknown tag")))
                    .collect::<Result<_>>()?;
                seen_tags = true;
            }
            Some(kind @ ("I" | "R")) => {
                let pos: usize = parts
                    .next()
                    .and_then(|p| p.parse().ok())
                    .ok_or_else(|| err(lineno, "bad position"))?;
                let ids = parts
                    .map(|p| p.parse::<TokenId>().map_err(|_| err(lineno, "bad token id")))
                    .collect::<Result<Vec<_>>>()?;
                let map = if kind == "I" {
                    &mut script.insertions
                } else {
                    &mut script.replacements
                };
                if map.insert(pos, ids).is_some() {
                    return Err(err(lineno, "duplicate content record"));
                }
            }
            _ => return Err(err(lineno, "unknown record")),
        }
    }
    if !seen_tags {
        return Err(err(0, "no tag record"));
    }
    Ok(script)
}
