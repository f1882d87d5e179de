//! Byte-level BPE with byte fallback.
//!
//! Ids 0..4 are the special tokens, ids 4..260 the 256 single bytes, and
//! every further id is one learned merge of two existing pieces.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use sha2::{Digest, Sha256};

use crate::edit_ops::TokenId;
use crate::error::{Error, Result};

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const SEP: TokenId = 3;

pub const SPECIAL_PIECES: [&str; 4] = ["<pad>", "<s>", "<eos>", "</s>"];
pub const BYTE_OFFSET: TokenId = 4;
pub const BASE_SIZE: usize = 260;

const FILE_MAGIC: &str = "#editproc-vocab v1";

fn pretokenizer() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r" ?[\p{L}\p{N}_]+| ?[^\s\p{L}\p{N}_]+|\s+").expect("static regex")
    })
}

fn special_splitter() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let alts: Vec<String> = SPECIAL_PIECES.iter().map(|p| regex::escape(p)).collect();
        Regex::new(&alts.join("|")).expect("static regex")
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pieces: Vec<Vec<u8>>,
    merges: Vec<(TokenId, TokenId)>,
    ranks: HashMap<(TokenId, TokenId), u32>,
}

impl Vocabulary {
    /// The 260-entry vocabulary: specials plus one piece per byte.
    pub fn byte_level() -> Self {
        let mut pieces: Vec<Vec<u8>> = SPECIAL_PIECES.iter().map(|p| p.as_bytes().to_vec()).collect();
        pieces.extend((0..=255u8).map(|b| vec![b]));
        Vocabulary {
            pieces,
            merges: Vec::new(),
            ranks: HashMap::new(),
        }
    }

    fn push_merge(&mut self, left: TokenId, right: TokenId) -> TokenId {
        let id = self.pieces.len() as TokenId;
        let mut piece = self.pieces[left as usize].clone();
        piece.extend_from_slice(&self.pieces[right as usize]);
        self.pieces.push(piece);
        self.ranks.insert((left, right), self.merges.len() as u32);
        self.merges.push((left, right));
        id
    }

    pub fn size(&self) -> usize {
        self.pieces.len()
    }

    pub fn piece(&self, id: TokenId) -> Option<&[u8]> {
        self.pieces.get(id as usize).map(Vec::as_slice)
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    pub fn is_special(id: TokenId) -> bool {
        id < BYTE_OFFSET
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(text.len() / 2);
        let mut last = 0;
        for m in special_splitter().find_iter(text) {
            self.encode_plain(&text[last..m.start()], &mut out);
            let idx = SPECIAL_PIECES.iter().position(|p| *p == m.as_str()).expect("matched special");
            out.push(idx as TokenId);
            last = m.end();
        }
        self.encode_plain(&text[last..], &mut out);
        out
    }

    /// `document SEP comment`.
    pub fn encode_with_comment(&self, document: &str, comment: &str) -> Vec<TokenId> {
        let mut ids = self.encode(document);
        ids.push(SEP);
        ids.extend(self.encode(comment));
        ids
    }

    fn encode_plain(&self, text: &str, out: &mut Vec<TokenId>) {
        for m in pretokenizer().find_iter(text) {
            let mut word: Vec<TokenId> = m.as_str().bytes().map(|b| BYTE_OFFSET + b as TokenId).collect();
            self.merge_word(&mut word);
            out.extend(word);
        }
    }

    fn merge_word(&self, word: &mut Vec<TokenId>) {
        if self.merges.is_empty() {
            return;
        }
        loop {
            let best = word
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                .min();
            let Some((rank, pair)) = best else { break };
            let merged = BASE_SIZE as TokenId + rank;
            let mut i = 0;
            let mut next = Vec::with_capacity(word.len());
            while i < word.len() {
                if i + 1 < word.len() && (word[i], word[i + 1]) == pair {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(word[i]);
                    i += 1;
                }
            }
            *word = next;
        }
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut bytes = Vec::with_capacity(ids.len() * 2);
        for &id in ids {
            let piece = self.piece(id).ok_or(Error::UnknownId(id))?;
            bytes.extend_from_slice(piece);
        }
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }

    pub fn to_file_string(&self) -> String {
        let mut s = format!("{FILE_MAGIC} {}\n", self.size());
        for (id, piece) in self.pieces.iter().enumerate() {
            if id < BYTE_OFFSET as usize {
                s.push_str(SPECIAL_PIECES[id]);
            } else {
                escape_into(piece, &mut s);
            }
            if id >= BASE_SIZE {
                let (l, r) = self.merges[id - BASE_SIZE];
                let _ = write!(s, "\t{l} {r}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Tokenizer(msg);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty vocabulary file".into()))?;
        let size: usize = header
            .strip_prefix(FILE_MAGIC)
            .and_then(|rest| rest.trim().parse().ok())
            .ok_or_else(|| bad(format!("bad header {header:?}")))?;
        let mut vocab = Vocabulary::byte_level();
        for (id, line) in lines.enumerate() {
            if id < BASE_SIZE {
                let expected = vocab.pieces[id].clone();
                let got = if id < BYTE_OFFSET as usize {
                    line.as_bytes().to_vec()
                } else {
                    unescape(line).ok_or_else(|| bad(format!("bad escape on line {}", id + 2)))?
                };
                if got != expected {
                    return Err(bad(format!("reserved id {id} holds unexpected piece")));
                }
                continue;
            }
            let (piece, pair) = line
                .split_once('\t')
                .ok_or_else(|| bad(format!("merge line {} missing pair", id + 2)))?;
            let (l, r) = pair
                .split_once(' ')
                .and_then(|(l, r)| Some((l.parse::<TokenId>().ok()?, r.parse::<TokenId>().ok()?)))
                .ok_or_else(|| bad(format!("bad merge pair on line {}", id + 2)))?;
            if l as usize >= id || r as usize >= id {
                return Err(bad(format!("merge on line {} references a later id", id + 2)));
            }
            vocab.push_merge(l, r);
            let piece = unescape(piece).ok_or_else(|| bad(format!("bad escape on line {}", id + 2)))?;
            if piece != vocab.pieces[id] {
                return Err(bad(format!("piece on line {} does not match its merge", id + 2)));
            }
        }
        if vocab.size() != size {
            return Err(bad(format!("header declares {size} pieces, found {}", vocab.size())));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())
            .map_err(|e| Error::io(format!("writing vocabulary {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading vocabulary {}", path.display()), e))?;
        Self::from_file_string(&text)
    }

    /// SHA-256 of the canonical file form, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_file_string().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

fn escape_into(piece: &[u8], out: &mut String) {
    for &b in piece {
        match b {
            b'\\' => out.push_str("\\\\"),
            0x21..=0x7e => out.push(b as char),
            _ => {
                let _ = write!(out, "\\x{b:02x}");
            }
        }
    }
}

fn unescape(s: &str) -> Option<Vec<u8>> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'\\' {
            match bytes.get(i + 1)? {
                b'\\' => {
                    out.push(b'\\');
                    i += 2;
                }
                b'x' => {
                    let hex = std::str::from_utf8(bytes.get(i + 2..i + 4)?).ok()?;
                    out.push(u8::from_str_radix(hex, 16).ok()?);
                    i += 4;
                }
                _ => return None,
            }
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    Some(out)
}

/// Learn merges until the vocabulary holds `target_size` pieces.
///
/// Pairs are counted over distinct pre-tokenized words weighted by frequency;
/// ties go to the numerically smallest pair. Training stops early (with a
/// warning) when no adjacent pair remains to merge.
pub fn train_vocab<I, S>(corpus: I, target_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if target_size < BASE_SIZE {
        return Err(Error::Tokenizer(format!(
            "target size {target_size} below the {BASE_SIZE}-entry byte vocabulary"
        )));
    }
    let mut word_counts: HashMap<Vec<TokenId>, u64> = HashMap::new();
    let mut saw_text = false;
    for text in corpus {
        let text = text.as_ref();
        saw_text |= !text.is_empty();
        for part in special_splitter().split(text) {
            for m in pretokenizer().find_iter(part) {
                let word = m.as_str().bytes().map(|b| BYTE_OFFSET + b as TokenId).collect();
                *word_counts.entry(word).or_default() += 1;
            }
        }
    }
    if !saw_text {
        return Err(Error::Tokenizer("cannot train a vocabulary on an empty corpus".into()));
    }

    let mut words: Vec<(Vec<TokenId>, u64)> = word_counts.into_iter().collect();
    words.sort();
    let mut vocab = Vocabulary::byte_level();
    while vocab.size() < target_size {
        let mut pairs: HashMap<(TokenId, TokenId), u64> = HashMap::new();
        for (word, count) in &words {
            for w in word.windows(2) {
                *pairs.entry((w[0], w[1])).or_default() += count;
            }
        }
        let Some((&pair, _)) = pairs
            .iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
        else {
            log::warn!(
                "corpus exhausted after {} merges; vocabulary has {} of {} pieces",
                vocab.merges.len(),
                vocab.size(),
                target_size
            );
            break;
        };
        let id = vocab.push_merge(pair.0, pair.1);
        for (word, _) in &mut words {
            if word.len() < 2 {
                continue;
            }
            let mut i = 0;
            let mut next = Vec::with_capacity(word.len());
            while i < word.len() {
                if i + 1 < word.len() && (word[i], word[i + 1]) == pair {
                    next.push(id);
                    i += 2;
                } else {
                    next.push(word[i]);
                    i += 1;
                }
            }
            *word = next;
        }
    }
    Ok(vocab)
}
