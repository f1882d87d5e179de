//! Edit, generation and operation perplexities.
//!
//! Corpus-level values sum log-likelihoods and lengths before
//! exponentiating, so they do not depend on how steps were batched. The
//! sentinel tag counts toward `|e|`; every generated span counts its EOS
//! toward `|x|`.

use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::edit_ops::OpTag;

/// Log-likelihoods (nats) of one revision step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepScore {
    pub l_e: f64,
    pub l_x_given_e: f64,
    pub l_xe: f64,
    pub n_e: usize,
    pub n_x: usize,
    /// `l_e` restricted to positions whose gold tag is each [`OpTag`].
    pub op_ll: [f64; 4],
    pub op_count: [usize; 4],
}

impl StepScore {
    /// Per-token objective `-L_xe / (|x| + |e|)`.
    pub fn normalized_nll(&self) -> f64 {
        -self.l_xe / (self.n_x + self.n_e).max(1) as f64
    }
}

impl Add for StepScore {
    type Output = StepScore;

    fn add(mut self, rhs: StepScore) -> StepScore {
        self += rhs;
        self
    }
}

impl AddAssign for StepScore {
    fn add_assign(&mut self, rhs: StepScore) {
        self.l_e += rhs.l_e;
        self.l_x_given_e += rhs.l_x_given_e;
        self.l_xe += rhs.l_xe;
        self.n_e += rhs.n_e;
        self.n_x += rhs.n_x;
        for i in 0..4 {
            self.op_ll[i] += rhs.op_ll[i];
            self.op_count[i] += rhs.op_count[i];
        }
    }
}

pub fn total(scores: &[StepScore]) -> StepScore {
    scores.iter().copied().fold(StepScore::default(), Add::add)
}

/// `exp(-L_xe / (|x| + |e|))`; absent when no operations were scored.
pub fn eppl(scores: &[StepScore]) -> Option<f64> {
    let t = total(scores);
    (t.n_e > 0).then(|| (-t.l_xe / (t.n_x + t.n_e) as f64).exp())
}

/// `exp(-L_x|e / |x|)`; absent when no span tokens exist.
pub fn gppl(scores: &[StepScore]) -> Option<f64> {
    let t = total(scores);
    (t.n_x > 0).then(|| (-t.l_x_given_e / t.n_x as f64).exp())
}

/// `exp(-L_e / |e|)`.
pub fn oppl(scores: &[StepScore]) -> Option<f64> {
    let t = total(scores);
    (t.n_e > 0).then(|| (-t.l_e / t.n_e as f64).exp())
}

/// oPPL restricted to positions bearing `op` as the gold tag.
pub fn oppl_for(scores: &[StepScore], op: OpTag) -> Option<f64> {
    let t = total(scores);
    let i = op.index();
    (t.op_count[i] > 0).then(|| (-t.op_ll[i] / t.op_count[i] as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub steps: usize,
    pub n_e: usize,
    pub n_x: usize,
    pub eppl: Option<f64>,
    pub gppl: Option<f64>,
    pub oppl: Option<f64>,
    pub oppl_by_op: BTreeMap<String, Option<f64>>,
}

impl Report {
    pub fn from_scores(scores: &[StepScore]) -> Self {
        let t = total(scores);
        Report {
            steps: scores.len(),
            n_e: t.n_e,
            n_x: t.n_x,
            eppl: eppl(scores),
            gppl: gppl(scores),
            oppl: oppl(scores),
            oppl_by_op: OpTag::ALL
                .iter()
                .map(|&op| (op.name().to_string(), oppl_for(scores, op)))
                .collect(),
        }
    }

    /// Fixed-width table with the column order DEL, KEEP, REPL, INS.
    pub fn table(&self, label: &str) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let by = |op: OpTag| cell(self.oppl_by_op.get(op.name()).copied().flatten());
        let mut s = format!(
            "{:<12} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
            "split", "ePPL", "gPPL", "oPPL", "DEL", "KEEP", "REPL", "INS"
        );
        s.push_str(&format!(
            "{:<12} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
            label,
            cell(self.eppl),
            cell(self.gppl),
            cell(self.oppl),
            by(OpTag::Delete),
            by(OpTag::Keep),
            by(OpTag::Replace),
            by(OpTag::Insert),
        ));
        s
    }
}
