//! Per-file revision chains from a git repository's first-parent history.
//!
//! Shells out to the `git` executable. Each matching file yields one chain
//! starting from an empty revision, with the full file content at every
//! commit that changed it and the commit message as summary. A deletion ends
//! the chain; a later re-addition starts a new one.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use glob::Pattern;

use super::{Source, TextChain};
use crate::error::{Error, Result};

fn git(repo: &Path, args: &[&str]) -> Result<Vec<u8>> {
    let out = Command::new("git")
        .arg("-C")
        .arg(repo)
        .args(args)
        .output()
        .map_err(|e| Error::Vcs(format!("cannot run git: {e}")))?;
    if !out.status.success() {
        return Err(Error::Vcs(format!(
            "git {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    Ok(out.stdout)
}

struct Commit {
    hash: String,
    message: String,
}

/// First-parent commits, oldest first.
fn commits(repo: &Path) -> Result<Vec<Commit>> {
    let raw = git(repo, &["log", "--first-parent", "--reverse", "--format=%H%x1f%B%x1e", "HEAD"])?;
    let text = String::from_utf8_lossy(&raw);
    Ok(text
        .split('\x1e')
        .filter_map(|rec| {
            let rec = rec.trim_start_matches('\n');
            let (hash, msg) = rec.split_once('\x1f')?;
            Some(Commit {
                hash: hash.trim().to_string(),
                message: msg.trim().to_string(),
            })
        })
        .collect())
}

/// `(status, path)` for files changed between `parent` and `commit`.
fn changes(repo: &Path, parent: Option<&str>, commit: &str) -> Result<Vec<(char, String)>> {
    let mut args = vec!["diff-tree", "-r", "-z", "--no-commit-id", "--no-renames", "--name-status"];
    match parent {
        Some(p) => args.extend([p, commit]),
        None => args.extend(["--root", commit]),
    }
    let raw = git(repo, &args)?;
    let fields: Vec<&[u8]> = raw.split(|&b| b == 0).filter(|f| !f.is_empty()).collect();
    let mut out = Vec::new();
    for pair in fields.chunks(2) {
        if let [status, path] = pair {
            let s = status.first().copied().unwrap_or(b'?') as char;
            out.push((s, String::from_utf8_lossy(path).into_owned()));
        }
    }
    Ok(out)
}

fn is_binary(bytes: &[u8]) -> bool {
    bytes.contains(&0) || std::str::from_utf8(bytes).is_err()
}

struct Open {
    chain: TextChain,
    binary: bool,
}

/// One chain per matching file (and per re-addition of a deleted file).
pub fn ingest_vcs(repo: &Path, file_glob: &str) -> Result<Vec<TextChain>> {
    if !repo.exists() {
        return Err(Error::Vcs(format!("{} does not exist", repo.display())));
    }
    git(repo, &["rev-parse", "--git-dir"])?;
    let pattern = Pattern::new(file_glob).map_err(|e| Error::Config(format!("bad glob {file_glob}: {e}")))?;
    let mut open: BTreeMap<String, Open> = BTreeMap::new();
    let mut restarts: BTreeMap<String, usize> = BTreeMap::new();
    let mut done = Vec::new();
    let close = |o: Open, done: &mut Vec<TextChain>| {
        if o.binary {
            log::warn!("skipping binary file {}", o.chain.doc_id);
        } else if o.chain.revisions.len() >= 2 {
            done.push(o.chain);
        }
    };

    let history = commits(repo)?;
    let mut parent: Option<&str> = None;
    for commit in &history {
        for (status, path) in changes(repo, parent, &commit.hash)? {
            if !pattern.matches(&path) {
                continue;
            }
            if status == 'D' {
                if let Some(o) = open.remove(&path) {
                    close(o, &mut done);
                }
                continue;
            }
            let entry = open.entry(path.clone()).or_insert_with(|| {
                let n = restarts.entry(path.clone()).or_insert(0);
                *n += 1;
                let doc_id = if *n == 1 { path.clone() } else { format!("{path}@{n}") };
                Open {
                    chain: TextChain {
                        doc_id,
                        revisions: vec![String::new()],
                        summaries: Vec::new(),
                        source: Source::Vcs,
                    },
                    binary: false,
                }
            });
            if entry.binary {
                continue;
            }
            let blob = git(repo, &["show", &format!("{}:{}", commit.hash, path)])?;
            if is_binary(&blob) {
                entry.binary = true;
                continue;
            }
            let text = String::from_utf8(blob).expect("checked utf-8");
            if entry.chain.revisions.last() != Some(&text) {
                entry.chain.revisions.push(text);
                entry.chain.summaries.push(Some(commit.message.clone()));
            }
        }
        parent = Some(&commit.hash);
    }
    for (_, o) in open {
        close(o, &mut done);
    }
    done.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(done)
}
