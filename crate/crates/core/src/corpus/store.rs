//! Precomputed step store.
//!
//! A store is a directory holding `manifest.json` and one shard file per
//! split. A shard is a sequence of records, each a little-endian `u32`
//! byte length followed by a JSON object: a `chain` header carrying `x_0`,
//! then one `step` record per revision with its token ids, summary and the
//! serialized edit script.

use std::fmt;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{RevisionChain, Source};
use crate::edit_ops::{self, EditScript, TokenId};
use crate::error::{Error, Result};
use crate::model::StepData;
use crate::tokenizer::Vocabulary;

pub const MANIFEST: &str = "manifest.json";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }
}

/// 90/5/5 assignment from `(doc_id, seed)` alone.
pub fn assign_split(doc_id: &str, seed: u64) -> Split {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(doc_id.as_bytes());
    let digest = h.finalize();
    let bucket = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) % 100;
    match bucket {
        0..=89 => Split::Train,
        90..=94 => Split::Valid,
        _ => Split::Test,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub split: Split,
    pub file: String,
    pub chains: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub version: u32,
    pub seed: u64,
    pub vocab_hash: String,
    pub vocab_size: usize,
    pub shards: Vec<ShardInfo>,
}

/// A chain read back from a store, with its scripts.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredChain {
    pub doc_id: String,
    pub origin_doc_id: String,
    pub source: Source,
    pub revisions: Vec<Vec<TokenId>>,
    pub summaries: Vec<Option<String>>,
    pub summary_tokens: Vec<Option<Vec<TokenId>>>,
    pub scripts: Vec<EditScript>,
}

impl StoredChain {
    /// Model inputs for every step, optionally conditioned on the summary.
    pub fn steps(&self, conditioned: bool) -> Vec<StepData> {
        (0..self.scripts.len())
            .map(|i| StepData {
                src: self.revisions[i].clone(),
                tgt: self.revisions[i + 1].clone(),
                script: self.scripts[i].clone(),
                condition: if conditioned {
                    Some(self.summary_tokens[i].clone().unwrap_or_default())
                } else {
                    None
                },
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Chain {
        doc_id: String,
        origin: String,
        source: Source,
        x0: Vec<TokenId>,
        steps: usize,
    },
    Step {
        index: usize,
        tokens: Vec<TokenId>,
        summary: Option<String>,
        summary_tokens: Option<Vec<TokenId>>,
        script: String,
    },
}

fn write_record<W: Write>(w: &mut W, rec: &Record) -> Result<()> {
    let bytes = serde_json::to_vec(rec)?;
    let io = |e| Error::io("writing store record", e);
    w.write_all(&(bytes.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&bytes).map_err(io)
}

/// Next record, or `None` at a clean end of file.
fn read_record<R: Read>(r: &mut R, path: &Path) -> Result<Option<Record>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = r.read(&mut len[got..]).map_err(|e| Error::io("reading store", e))?;
        if n == 0 {
            if got == 0 {
                return Ok(None);
            }
            return Err(Error::Store {
                path: path.to_path_buf(),
                msg: "truncated record length".into(),
            });
        }
        got += n;
    }
    let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut buf).map_err(|_| Error::Store {
        path: path.to_path_buf(),
        msg: "truncated record".into(),
    })?;
    Ok(Some(serde_json::from_slice(&buf)?))
}

/// Scripts for every consecutive pair, each checked by re-application.
fn scripts_for(chain: &RevisionChain) -> Result<Vec<EditScript>> {
    chain
        .revisions
        .windows(2)
        .map(|w| {
            let s = edit_ops::diff(&w[0], &w[1]);
            if edit_ops::apply(&w[0], &s)? != w[1] {
                return Err(Error::InvalidScript(format!("{}: script does not reapply", chain.doc_id)));
            }
            Ok(s)
        })
        .collect()
}

/// Write `chains` into a fresh store at `dir`, sharded by origin document.
pub fn precompute(chains: &[RevisionChain], vocab: &Vocabulary, dir: &Path, seed: u64) -> Result<StoreManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let scripts: Vec<Vec<EditScript>> = chains.par_iter().map(scripts_for).collect::<Result<_>>()?;
    let mut shards = Vec::new();
    for split in Split::ALL {
        let file = format!("{}.bin", split.name());
        let path = dir.join(&file);
        let f = std::fs::File::create(&path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut w = BufWriter::new(f);
        let mut info = ShardInfo {
            split,
            file,
            chains: 0,
            steps: 0,
        };
        for (chain, scripts) in chains.iter().zip(&scripts) {
            if assign_split(&chain.origin.doc_id, seed) != split {
                continue;
            }
            write_record(
                &mut w,
                &Record::Chain {
                    doc_id: chain.doc_id.clone(),
                    origin: chain.origin.doc_id.clone(),
                    source: chain.source,
                    x0: chain.revisions[0].clone(),
                    steps: scripts.len(),
                },
            )?;
            for (i, script) in scripts.iter().enumerate() {
                let summary = chain.summaries.get(i).cloned().flatten();
                write_record(
                    &mut w,
                    &Record::Step {
                        index: i + 1,
                        tokens: chain.revisions[i + 1].clone(),
                        summary_tokens: summary.as_deref().map(|s| vocab.encode(s)),
                        summary,
                        script: edit_ops::to_text(script),
                    },
                )?;
            }
            info.chains += 1;
            info.steps += scripts.len();
        }
        w.flush().map_err(|e| Error::io("writing store", e))?;
        shards.push(info);
    }
    let manifest = StoreManifest {
        version: STORE_VERSION,
        seed,
        vocab_hash: vocab.hash(),
        vocab_size: vocab.size(),
        shards,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join(MANIFEST), text + "\n").map_err(|e| Error::io("writing store manifest", e))?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct Store {
    pub dir: PathBuf,
    pub manifest: StoreManifest,
}

impl Store {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let manifest: StoreManifest = serde_json::from_str(&text)?;
        if manifest.version != STORE_VERSION {
            return Err(Error::Store {
                path,
                msg: format!("unsupported store version {}", manifest.version),
            });
        }
        Ok(Store {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    /// Read one split, re-validating every script against its revisions.
    pub fn read_split(&self, split: Split) -> Result<Vec<StoredChain>> {
        let mut out = Vec::new();
        for shard in self.manifest.shards.iter().filter(|s| s.split == split) {
            out.extend(self.read_shard(&self.dir.join(&shard.file))?);
        }
        Ok(out)
    }

    pub fn read_all(&self) -> Result<Vec<StoredChain>> {
        let mut out = Vec::new();
        for s in Split::ALL {
            out.extend(self.read_split(s)?);
        }
        Ok(out)
    }

    fn read_shard(&self, path: &Path) -> Result<Vec<StoredChain>> {
        let bad = |msg: String| Error::Store {
            path: path.to_path_buf(),
            msg,
        };
        let f = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let mut r = BufReader::new(f);
        let mut out: Vec<StoredChain> = Vec::new();
        let mut expected = 0usize;
        while let Some(rec) = read_record(&mut r, path)? {
            match rec {
                Record::Chain {
                    doc_id,
                    origin,
                    source,
                    x0,
                    steps,
                } => {
                    if expected != 0 {
                        return Err(bad(format!("chain before {expected} pending steps")));
                    }
                    expected = steps;
                    out.push(StoredChain {
                        doc_id,
                        origin_doc_id: origin,
                        source,
                        revisions: vec![x0],
                        summaries: Vec::new(),
                        summary_tokens: Vec::new(),
                        scripts: Vec::new(),
                    });
                }
                Record::Step {
                    index,
                    tokens,
                    summary,
                    summary_tokens,
                    script,
                } => {
                    let chain = out.last_mut().ok_or_else(|| bad("step before any chain".into()))?;
                    if expected == 0 || index != chain.revisions.len() {
                        return Err(bad(format!("unexpected step {index} in {}", chain.doc_id)));
                    }
                    let script = edit_ops::from_text(&script)?;
                    let prev = chain.revisions.last().expect("x0");
                    if edit_ops::apply(prev, &script)? != tokens {
                        return Err(bad(format!("{} step {index} does not reapply", chain.doc_id)));
                    }
                    chain.revisions.push(tokens);
                    chain.summaries.push(summary);
                    chain.summary_tokens.push(summary_tokens);
                    chain.scripts.push(script);
                    expected -= 1;
                }
            }
        }
        if expected != 0 {
            return Err(bad(format!("{expected} steps missing at end of shard")));
        }
        Ok(out)
    }
}
