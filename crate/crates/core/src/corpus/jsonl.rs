//! Generic revision-chain JSONL, one chain per line:
//!
//! ```text
//! {"doc_id": "a", "revisions": ["x0", "x1", ...], "summaries": [null, "msg", ...]}
//! ```
//!
//! `summaries` is optional; when present it has one entry per revision
//! after the first.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Deserialize;

use super::{Source, TextChain};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Default)]
pub struct Ingested {
    pub chains: Vec<TextChain>,
    pub errors: Vec<RecordError>,
    /// No-op revisions removed across all chains.
    pub dropped_noops: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    doc_id: String,
    revisions: Vec<String>,
    #[serde(default)]
    summaries: Option<Vec<Option<String>>>,
}

fn parse_line(line: &str) -> std::result::Result<(TextChain, usize), String> {
    let rec: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if rec.doc_id.is_empty() {
        return Err("empty doc_id".into());
    }
    let n = rec.revisions.len();
    let summaries = match rec.summaries {
        Some(s) if s.len() + 1 != n => {
            return Err(format!("{} summaries for {} revisions", s.len(), n));
        }
        Some(s) => s,
        None => vec![None; n.saturating_sub(1)],
    };
    let mut chain = TextChain {
        doc_id: rec.doc_id,
        revisions: rec.revisions,
        summaries,
        source: Source::Generic,
    };
    let dropped = chain.drop_noops();
    if chain.revisions.len() < 2 {
        return Err("needs at least two distinct revisions".into());
    }
    Ok((chain, dropped))
}

/// Parse JSONL from any reader. Bad records are collected, not fatal.
pub fn read<R: BufRead>(reader: R) -> Result<Ingested> {
    let mut out = Ingested::default();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("reading chain file", e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Ok((chain, dropped)) => {
                out.dropped_noops += dropped;
                out.chains.push(chain);
            }
            Err(msg) => {
                log::warn!("line {}: {}", n + 1, msg);
                out.errors.push(RecordError { line: n + 1, msg });
            }
        }
    }
    Ok(out)
}

pub fn ingest_generic(path: &Path) -> Result<Ingested> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let out = read(BufReader::new(file))?;
    if out.chains.is_empty() && out.errors.is_empty() {
        log::warn!("{} contains no chains", path.display());
    }
    Ok(out)
}

/// One JSONL line per chain, in the same layout `read` accepts.
pub fn write<W: Write>(mut w: W, chains: &[TextChain]) -> Result<()> {
    for c in chains {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n").map_err(|e| Error::io("writing chains", e))?;
    }
    Ok(())
}
