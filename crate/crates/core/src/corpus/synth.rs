//! Synthetic edit processes whose next step depends on the previous one.
//!
//! Each chain starts from a random lowercase string. Steps come in pairs: a
//! random single-letter edit (insert, delete or replace at a uniform
//! position) followed by either a revert of that edit or a repeat of the
//! same operation at the same position. A model that only sees the current
//! document cannot tell where the previous edit happened; one that sees the
//! previous edit can. Summaries name what each step did.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Source, TextChain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub chains: usize,
    /// Pairs of (random edit, follow-up) per chain.
    pub pairs: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Letters drawn from the first `alphabet` lowercase letters.
    pub alphabet: usize,
    /// Probability that a follow-up reverts rather than repeats.
    pub revert_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            chains: 5000,
            pairs: 3,
            min_len: 8,
            max_len: 16,
            alphabet: 26,
            revert_prob: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Insert,
    Delete,
    Replace,
}

impl Op {
    fn name(self) -> &'static str {
        match self {
            Op::Insert => "insert",
            Op::Delete => "delete",
            Op::Replace => "replace",
        }
    }
}

struct Gen<'c> {
    cfg: &'c SynthConfig,
    rng: ChaCha8Rng,
}

impl Gen<'_> {
    fn letter(&mut self) -> u8 {
        b'a' + self.rng.gen_range(0..self.cfg.alphabet.clamp(2, 26)) as u8
    }

    fn other_letter(&mut self, not: u8) -> u8 {
        loop {
            let c = self.letter();
            if c != not {
                return c;
            }
        }
    }

    fn apply(&mut self, doc: &[u8], op: Op, pos: usize) -> Vec<u8> {
        let mut out = doc.to_vec();
        match op {
            Op::Insert => {
                let c = self.letter();
                out.insert(pos, c);
            }
            Op::Delete => {
                out.remove(pos);
            }
            Op::Replace => {
                out[pos] = self.other_letter(doc[pos]);
            }
        }
        out
    }

    fn random_op(&mut self, len: usize) -> Op {
        let mut ops = vec![Op::Replace];
        if len < self.cfg.max_len {
            ops.push(Op::Insert);
        }
        if len > self.cfg.min_len {
            ops.push(Op::Delete);
        }
        ops[self.rng.gen_range(0..ops.len())]
    }

    fn chain(&mut self, id: usize) -> TextChain {
        let len = self.rng.gen_range(self.cfg.min_len..=self.cfg.max_len);
        let mut doc: Vec<u8> = (0..len).map(|_| self.letter()).collect();
        let mut revisions = vec![doc.clone()];
        let mut summaries = Vec::new();
        for _ in 0..self.cfg.pairs {
            let op = self.random_op(doc.len());
            let pos = match op {
                Op::Insert => self.rng.gen_range(0..=doc.len()),
                _ => self.rng.gen_range(0..doc.len()),
            };
            let before = doc.clone();
            doc = self.apply(&before, op, pos);
            revisions.push(doc.clone());
            summaries.push(Some(op.name().to_string()));

            let repeat_ok = match op {
                Op::Insert => doc.len() < self.cfg.max_len,
                Op::Delete => doc.len() > self.cfg.min_len && pos < doc.len(),
                Op::Replace => true,
            };
            let revert = !repeat_ok || self.rng.gen_bool(self.cfg.revert_prob.clamp(0.0, 1.0));
            if revert {
                doc = before;
                summaries.push(Some(format!("revert {}", op.name())));
            } else {
                doc = self.apply(&doc.clone(), op, pos);
                summaries.push(Some(format!("repeat {}", op.name())));
            }
            revisions.push(doc.clone());
        }
        let mut chain = TextChain {
            doc_id: format!("synth-{id}"),
            revisions: revisions
                .into_iter()
                .map(|r| String::from_utf8(r).expect("ascii"))
                .collect(),
            summaries,
            source: Source::Generic,
        };
        chain.drop_noops();
        chain
    }
}

pub fn synthetic_chains(cfg: &SynthConfig) -> Vec<TextChain> {
    let mut g = Gen {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    (0..cfg.chains).map(|i| g.chain(i)).collect()
}
