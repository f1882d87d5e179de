//! Revision chains: ingest, splitting, precomputed stores and statistics.

pub mod jsonl;
pub mod split;
pub mod stats;
pub mod store;
pub mod synth;
pub mod vcs;

use serde::{Deserialize, Serialize};

use crate::edit_ops::TokenId;
use crate::tokenizer::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Generic,
    Vcs,
}

/// A document's revision history as text, before tokenization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextChain {
    pub doc_id: String,
    pub revisions: Vec<String>,
    /// One entry per revision after the first.
    pub summaries: Vec<Option<String>>,
    #[serde(default, skip_serializing)]
    pub source: Source,
}

impl TextChain {
    /// Drop revisions identical to their predecessor along with their
    /// summaries. Returns how many were dropped.
    pub fn drop_noops(&mut self) -> usize {
        let before = self.revisions.len();
        let mut revisions = Vec::with_capacity(before);
        let mut summaries = Vec::with_capacity(self.summaries.len());
        for (i, rev) in std::mem::take(&mut self.revisions).into_iter().enumerate() {
            if i > 0 && revisions.last() == Some(&rev) {
                continue;
            }
            if i > 0 {
                summaries.push(self.summaries.get(i - 1).cloned().flatten());
            }
            revisions.push(rev);
        }
        self.revisions = revisions;
        self.summaries = summaries;
        before - self.revisions.len()
    }

    /// Number of edit steps.
    pub fn steps(&self) -> usize {
        self.revisions.len().saturating_sub(1)
    }

    pub fn tokenize(&self, vocab: &Vocabulary) -> RevisionChain {
        RevisionChain {
            doc_id: self.doc_id.clone(),
            origin: Origin {
                doc_id: self.doc_id.clone(),
                segment: 0,
            },
            revisions: self.revisions.iter().map(|r| vocab.encode(r)).collect(),
            revision_index: (0..self.revisions.len()).collect(),
            summaries: self.summaries.clone(),
            source: self.source,
        }
    }
}

/// Where a chain came from before splitting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub doc_id: String,
    pub segment: usize,
}

/// A tokenized revision chain `x_0..x_N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionChain {
    pub doc_id: String,
    pub origin: Origin,
    pub revisions: Vec<Vec<TokenId>>,
    /// For each revision, the index of the source revision it was cut from.
    pub revision_index: Vec<usize>,
    pub summaries: Vec<Option<String>>,
    pub source: Source,
}

impl RevisionChain {
    pub fn steps(&self) -> usize {
        self.revisions.len().saturating_sub(1)
    }
}
