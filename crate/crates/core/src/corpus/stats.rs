//! Operation distribution and length statistics of a store.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::store::StoredChain;
use crate::edit_ops::OpTag;

/// Tag counts include the sentinel position of every step, matching the
/// tag sequences the model is trained on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub name: String,
    pub edits: usize,
    pub revisions: usize,
    pub avg_len: f64,
    pub max_len: usize,
    pub min_len: usize,
    pub keep: usize,
    pub insert: usize,
    pub replace: usize,
    pub delete: usize,
}

impl CorpusStats {
    pub fn tags(&self) -> usize {
        self.keep + self.insert + self.replace + self.delete
    }

    fn pct(&self, n: usize) -> f64 {
        match self.tags() {
            0 => 0.0,
            t => 100.0 * n as f64 / t as f64,
        }
    }

    pub fn pct_keep(&self) -> f64 {
        self.pct(self.keep)
    }

    pub fn pct_insert(&self) -> f64 {
        self.pct(self.insert)
    }

    pub fn pct_replace(&self) -> f64 {
        self.pct(self.replace)
    }

    pub fn pct_delete(&self) -> f64 {
        self.pct(self.delete)
    }

    /// Fractions in tag-index order (KEEP, DELETE, REPLACE, INSERT).
    pub fn distribution(&self) -> [f64; 4] {
        let t = self.tags().max(1) as f64;
        [self.keep, self.delete, self.replace, self.insert].map(|n| n as f64 / t)
    }

    pub const HEADER: &'static str = "Dataset\tNum. Edits\tAvg. Len (Max/Min)\t% Keep\t% Insert\t% Replace\t% Delete";

    /// One tab-separated row under [`CorpusStats::HEADER`].
    pub fn row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{}\t{}\t{:.1} ({}/{})\t{:.2}\t{:.2}\t{:.2}\t{:.2}",
            self.name,
            self.edits,
            self.avg_len,
            self.max_len,
            self.min_len,
            self.pct_keep(),
            self.pct_insert(),
            self.pct_replace(),
            self.pct_delete()
        );
        s
    }
}

/// Statistics over every chain; empty input gives an all-zero report.
pub fn stats(name: &str, chains: &[StoredChain]) -> CorpusStats {
    let mut st = CorpusStats {
        name: name.to_string(),
        ..Default::default()
    };
    let mut total_len = 0usize;
    let mut min_len = usize::MAX;
    for c in chains {
        for rev in &c.revisions {
            st.revisions += 1;
            total_len += rev.len();
            st.max_len = st.max_len.max(rev.len());
            min_len = min_len.min(rev.len());
        }
        for script in &c.scripts {
            st.edits += 1;
            for t in &script.tags {
                match t {
                    OpTag::Keep => st.keep += 1,
                    OpTag::Insert => st.insert += 1,
                    OpTag::Replace => st.replace += 1,
                    OpTag::Delete => st.delete += 1,
                }
            }
        }
    }
    if st.revisions > 0 {
        st.avg_len = total_len as f64 / st.revisions as f64;
        st.min_len = min_len;
    }
    st
}
