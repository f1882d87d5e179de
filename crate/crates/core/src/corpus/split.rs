//! Cutting long documents into keyed segments that are tracked as separate
//! chains across revisions.

use std::collections::{BTreeMap, HashMap};

use regex::Regex;

use super::{Origin, RevisionChain, TextChain};
use crate::edit_ops::TokenId;
use crate::error::{Error, Result};
use crate::tokenizer::Vocabulary;

/// How a revision is cut into segments.
#[derive(Debug, Clone)]
pub enum SegmentRule {
    /// Blocks separated by blank lines, keyed by their first line.
    BlankLines,
    /// A new segment starts at every line matching the pattern, keyed by
    /// its first capture group (or the whole line without one).
    LineStart(Regex),
}

impl SegmentRule {
    /// Top-level definitions in common programming languages.
    pub fn code() -> Self {
        SegmentRule::LineStart(
            Regex::new(
                r"^(?:pub(?:\([^)]*\))?\s+)?(?:async\s+)?(?:export\s+)?(?:def|class|fn|struct|enum|impl|trait|mod|function|func|interface|type)\s+([A-Za-z_][A-Za-z0-9_]*)",
            )
            .expect("valid pattern"),
        )
    }

    pub fn pattern(p: &str) -> Result<Self> {
        Regex::new(p)
            .map(SegmentRule::LineStart)
            .map_err(|e| Error::Config(format!("bad segment pattern: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub key: String,
    pub text: String,
}

/// Cut `text` into segments whose texts concatenate back to `text`.
/// Repeated keys within one revision get an occurrence suffix.
pub fn segments(text: &str, rule: &SegmentRule) -> Vec<Segment> {
    let mut bounds = vec![0usize];
    let mut offset = 0;
    let mut prev_blank = false;
    for line in text.split_inclusive('\n') {
        let starts = match rule {
            SegmentRule::BlankLines => {
                let blank = line.trim().is_empty();
                let s = prev_blank && !blank;
                prev_blank = blank;
                s
            }
            SegmentRule::LineStart(re) => re.is_match(line),
        };
        if starts && offset > 0 {
            bounds.push(offset);
        }
        offset += line.len();
    }
    bounds.push(text.len());
    bounds.dedup();

    let mut seen: HashMap<String, usize> = HashMap::new();
    bounds
        .windows(2)
        .map(|w| {
            let piece = &text[w[0]..w[1]];
            let first = piece.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
            let base = match rule {
                SegmentRule::LineStart(re) => re
                    .captures(first)
                    .and_then(|c| c.get(1).or_else(|| c.get(0)))
                    .map_or_else(|| first.trim().to_string(), |m| m.as_str().to_string()),
                SegmentRule::BlankLines => first.trim().to_string(),
            };
            let n = seen.entry(base.clone()).or_insert(0);
            *n += 1;
            let key = if *n == 1 { base } else { format!("{base}#{n}") };
            Segment {
                key,
                text: piece.to_string(),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SplitOptions {
    pub max_doc_tokens: usize,
    pub rule: SegmentRule,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            max_doc_tokens: 2000,
            rule: SegmentRule::BlankLines,
        }
    }
}

fn truncate(mut ids: Vec<TokenId>, max: usize, what: &str) -> Vec<TokenId> {
    if ids.len() > max {
        log::warn!("{what}: {} tokens truncated to {max}", ids.len());
        ids.truncate(max);
    }
    ids
}

struct Building {
    chain: RevisionChain,
}

impl Building {
    fn push(&mut self, ids: Vec<TokenId>, index: usize, summary: Option<String>) {
        if self.chain.revisions.last() == Some(&ids) {
            return;
        }
        self.chain.revisions.push(ids);
        self.chain.revision_index.push(index);
        self.chain.summaries.push(summary);
    }
}

/// Tokenize `chain`, splitting it into segment chains when any revision
/// exceeds the token limit.
///
/// Segments align across revisions by key. A segment that appears after the
/// first revision starts its own chain from an empty document; one that
/// disappears ends its chain. Chains left with no edit step are dropped.
pub fn split_long(chain: &TextChain, vocab: &Vocabulary, opts: &SplitOptions) -> Result<Vec<RevisionChain>> {
    if opts.max_doc_tokens == 0 {
        return Err(Error::Config("max_doc_tokens must be positive".into()));
    }
    let whole: Vec<Vec<TokenId>> = chain.revisions.iter().map(|r| vocab.encode(r)).collect();
    if whole.iter().all(|r| r.len() <= opts.max_doc_tokens) {
        let mut out = chain.tokenize(vocab);
        out.revisions = whole;
        return Ok(vec![out]);
    }

    let mut live: BTreeMap<String, Building> = BTreeMap::new();
    let mut finished: Vec<Building> = Vec::new();
    let mut next_segment = 0usize;
    for (r, text) in chain.revisions.iter().enumerate() {
        let summary = if r == 0 { None } else { chain.summaries.get(r - 1).cloned().flatten() };
        let segs = segments(text, &opts.rule);
        let present: Vec<&str> = segs.iter().map(|s| s.key.as_str()).collect();
        let gone: Vec<String> = live.keys().filter(|k| !present.contains(&k.as_str())).cloned().collect();
        for k in gone {
            finished.push(live.remove(&k).expect("live key"));
        }
        for seg in segs {
            let what = format!("{} segment {:?}", chain.doc_id, seg.key);
            let ids = truncate(vocab.encode(&seg.text), opts.max_doc_tokens, &what);
            let b = live.entry(seg.key.clone()).or_insert_with(|| {
                let segment = next_segment;
                next_segment += 1;
                let mut revisions = Vec::new();
                let mut revision_index = Vec::new();
                if r > 0 {
                    revisions.push(Vec::new());
                    revision_index.push(r - 1);
                }
                Building {
                    chain: RevisionChain {
                        doc_id: format!("{}#{}", chain.doc_id, segment),
                        origin: Origin {
                            doc_id: chain.doc_id.clone(),
                            segment,
                        },
                        revisions,
                        revision_index,
                        summaries: Vec::new(),
                        source: chain.source,
                    },
                }
            });
            if b.chain.revisions.is_empty() {
                b.chain.revisions.push(ids);
                b.chain.revision_index.push(r);
            } else {
                b.push(ids, r, summary.clone());
            }
        }
    }
    finished.extend(live.into_values());
    let mut out: Vec<RevisionChain> = finished
        .into_iter()
        .map(|b| b.chain)
        .filter(|c| c.revisions.len() >= 2)
        .collect();
    out.sort_by_key(|c| c.origin.segment);
    Ok(out)
}
